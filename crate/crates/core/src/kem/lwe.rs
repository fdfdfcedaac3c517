//! Dual-Regev encryption core shared by the identity and ephemeral KEMs.
//!
//! Matrices are flat vectors. `A` is row-major `n x m`; syndrome matrices `U`
//! and preimage matrices `X` are stored column by column, since every
//! operation walks one secret bit (one column) at a time.

use rand::{CryptoRng, Rng, RngCore};

use super::KemParams;

#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) struct LweCiphertext {
    pub(crate) c0: Vec<u32>,
    pub(crate) c1: Vec<u32>,
}

fn small<R: RngCore>(rng: &mut R, bound: u32) -> i64 {
    rng.gen_range(-(bound as i64)..=bound as i64)
}

/// Encrypts a fresh random `ell`-bit string under `(A, U)`; returns the
/// ciphertext and the packed bits.
///
/// `c0 = A^T s + e0`, `c1 = U^T s + e1 + floor(q/2) * bits`.
pub(crate) fn encrypt<R: RngCore + CryptoRng>(
    params: &KemParams,
    a: &[u32],
    u_cols: &[u32],
    rng: &mut R,
) -> (LweCiphertext, Vec<u8>) {
    let (n, m, ell, q) = (params.n, params.m, params.ell, params.q as u64);
    debug_assert_eq!(a.len(), n * m);
    debug_assert_eq!(u_cols.len(), n * ell);

    let s: Vec<u64> = (0..n).map(|_| rng.gen_range(0..params.q) as u64).collect();
    let mut bits = vec![0u8; ell / 8];
    rng.fill_bytes(&mut bits);

    let mut acc = vec![0u64; m];
    for (i, &si) in s.iter().enumerate() {
        let row = &a[i * m..(i + 1) * m];
        for (slot, &aij) in acc.iter_mut().zip(row) {
            *slot += aij as u64 * si;
        }
    }
    let c0 = acc
        .into_iter()
        .map(|v| ((v % q) as i64 + small(rng, params.eta)).rem_euclid(q as i64) as u32)
        .collect();

    let half = q / 2;
    let c1 = (0..ell)
        .map(|l| {
            let col = &u_cols[l * n..(l + 1) * n];
            let dot: u64 = col.iter().zip(&s).map(|(&u, &si)| u as u64 * si).sum::<u64>() % q;
            let bit = (bits[l / 8] >> (l % 8)) & 1;
            let v = dot as i64 + small(rng, params.eta) + (bit as u64 * half) as i64;
            v.rem_euclid(q as i64) as u32
        })
        .collect();

    (LweCiphertext { c0, c1 }, bits)
}

/// Recovers the packed bits: bit `l` is 1 iff `c1[l] - <x_l, c0>` is closer to
/// `q/2` than to 0.
pub(crate) fn decrypt<T: Copy + Into<i64>>(params: &KemParams, x_cols: &[T], ct: &LweCiphertext) -> Vec<u8> {
    let (m, ell, q) = (params.m, params.ell, params.q as i64);
    let mut bits = vec![0u8; ell / 8];
    for l in 0..ell {
        let col = &x_cols[l * m..(l + 1) * m];
        let dot: i64 = col.iter().zip(&ct.c0).map(|(&x, &c)| x.into() * c as i64).sum();
        let v = (ct.c1[l] as i64 - dot).rem_euclid(q);
        let dist = v.min(q - v);
        if dist > q / 4 {
            bits[l / 8] |= 1 << (l % 8);
        }
    }
    bits
}

/// Computes `A * x mod q` for one column `x` of length `m`.
pub(crate) fn mul_column<T: Copy + Into<i64>>(params: &KemParams, a: &[u32], x: &[T]) -> Vec<u32> {
    let (n, m, q) = (params.n, params.m, params.q as i64);
    (0..n)
        .map(|i| {
            let row = &a[i * m..(i + 1) * m];
            let dot: i64 = row.iter().zip(x).map(|(&aij, &xj)| aij as i64 * xj.into()).sum();
            dot.rem_euclid(q) as u32
        })
        .collect()
}

/// Expands a 32-byte seed into a uniform `n x m` matrix.
pub(crate) fn expand_matrix(params: &KemParams, seed: [u8; 32]) -> Vec<u32> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha20Rng::from_seed(seed);
    (0..params.n * params.m).map(|_| rng.gen_range(0..params.q)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn zero_key_decrypts_when_u_is_zero() {
        // With U = 0 and X = 0 the message is carried by c1 alone.
        let params = KemParams::compact();
        let a = expand_matrix(&params, [1; 32]);
        let u = vec![0u32; params.n * params.ell];
        let mut rng = ChaCha20Rng::from_seed([2; 32]);
        let (ct, bits) = encrypt(&params, &a, &u, &mut rng);
        let x = vec![0i8; params.m * params.ell];
        assert_eq!(decrypt(&params, &x, &ct), bits);
    }

    #[test]
    fn entries_stay_in_range() {
        let params = KemParams::compact();
        let a = expand_matrix(&params, [3; 32]);
        let u = vec![params.q - 1; params.n * params.ell];
        let mut rng = ChaCha20Rng::from_seed([4; 32]);
        let (ct, _) = encrypt(&params, &a, &u, &mut rng);
        assert!(ct.c0.iter().chain(&ct.c1).all(|&v| v < params.q));
        assert_eq!(ct.c0.len(), params.m);
        assert_eq!(ct.c1.len(), params.ell);
    }
}
