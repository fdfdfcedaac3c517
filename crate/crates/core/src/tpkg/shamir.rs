//! Shamir secret sharing over a prime field.

use num_bigint::{BigUint, RandBigInt};
use num_traits::{One, Zero};
use rand::RngCore;

use super::TpkgError;

/// Arithmetic modulo a prime `p`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PrimeField {
    p: BigUint,
}

impl PrimeField {
    /// `p` must be prime; this is not checked.
    pub fn new(p: BigUint) -> Self {
        assert!(p > BigUint::from(2u8), "field modulus too small");
        PrimeField { p }
    }

    /// The field of order 2^256 - 189, the largest prime below 2^256.
    pub fn p256() -> Self {
        PrimeField::new((BigUint::one() << 256u32) - BigUint::from(189u8))
    }

    pub fn modulus(&self) -> &BigUint {
        &self.p
    }

    pub fn contains(&self, v: &BigUint) -> bool {
        v < &self.p
    }

    fn add(&self, a: &BigUint, b: &BigUint) -> BigUint {
        (a + b) % &self.p
    }

    fn sub(&self, a: &BigUint, b: &BigUint) -> BigUint {
        ((a + &self.p) - (b % &self.p)) % &self.p
    }

    fn mul(&self, a: &BigUint, b: &BigUint) -> BigUint {
        (a * b) % &self.p
    }

    fn inv(&self, a: &BigUint) -> BigUint {
        a.modpow(&(&self.p - BigUint::from(2u8)), &self.p)
    }

    fn eval(&self, coeffs: &[BigUint], x: &BigUint) -> BigUint {
        coeffs.iter().rev().fold(BigUint::zero(), |acc, c| self.add(&self.mul(&acc, x), c))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShamirShare {
    /// Evaluation point, never zero.
    pub x: u32,
    pub y: BigUint,
}

/// Splits `secret` into `n` shares, any `t` of which recover it.
pub fn split<R: RngCore + ?Sized>(
    field: &PrimeField,
    secret: &BigUint,
    t: usize,
    n: usize,
    rng: &mut R,
) -> Result<Vec<ShamirShare>, TpkgError> {
    if t == 0 || t > n {
        return Err(TpkgError::InvalidThreshold { t, n });
    }
    if !field.contains(secret) {
        return Err(TpkgError::InvalidSeed("secret is not a field element".into()));
    }
    if BigUint::from(n) >= field.p {
        return Err(TpkgError::InvalidThreshold { t, n });
    }
    let mut coeffs = vec![secret.clone()];
    for _ in 1..t {
        coeffs.push(rng.gen_biguint_below(&field.p));
    }
    let shares = (1..=n as u32)
        .map(|x| ShamirShare { x, y: field.eval(&coeffs, &BigUint::from(x)) })
        .collect();
    for c in coeffs.iter_mut() {
        c.set_zero();
    }
    Ok(shares)
}

/// Lagrange interpolation at zero. Any number of shares is accepted; with
/// fewer than the threshold the result is unrelated to the secret.
pub fn combine(field: &PrimeField, shares: &[ShamirShare]) -> Result<BigUint, TpkgError> {
    let mut xs: Vec<u32> = shares.iter().map(|s| s.x).collect();
    xs.sort_unstable();
    xs.dedup();
    if xs.len() != shares.len() || xs.first() == Some(&0) {
        return Err(TpkgError::ShareMismatch("duplicate or zero share index".into()));
    }
    let mut acc = BigUint::zero();
    for (i, si) in shares.iter().enumerate() {
        let xi = BigUint::from(si.x);
        let mut num = BigUint::one();
        let mut den = BigUint::one();
        for (j, sj) in shares.iter().enumerate() {
            if i != j {
                let xj = BigUint::from(sj.x);
                num = field.mul(&num, &xj);
                den = field.mul(&den, &field.sub(&xj, &xi));
            }
        }
        let li = field.mul(&num, &field.inv(&den));
        acc = field.add(&acc, &field.mul(&si.y, &li));
    }
    Ok(acc)
}
