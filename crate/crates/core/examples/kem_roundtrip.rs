//! Master setup, key extraction and an identity KEM round trip at desk
//! parameters, plus what happens with the wrong key.
//!
//! ```bash
//! cargo run --example kem_roundtrip
//! ```

use ibetls::kem::{decaps, encaps, extract, setup, IdentityString, KemParams};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let params = KemParams::desk();
    let (mpk, msk) = setup(&params, [7; 32])?;

    let alice: IdentityString = "prod.payments.checkout-api.1".parse()?;
    let sk = extract(&msk, &mpk, &alice)?;
    println!("extracted key for {} (|X|_inf = {} <= beta = {})", sk.identity(), sk.inf_norm(), params.beta);
    assert!(sk.verify(&mpk));

    let (ct, ss) = encaps(&mpk, &alice, [1; 32]);
    let ss2 = decaps(&sk, &ct)?;
    println!("ciphertext {} bytes, secrets match: {}", ct.to_bytes().len(), ss == ss2);

    // Decapsulating with someone else's key yields an unrelated secret, no error.
    let bob = extract(&msk, &mpk, &"prod.payments.ledger.1".parse()?)?;
    let wrong = decaps(&bob, &ct)?;
    println!("wrong key gives a different secret: {}", wrong != ss);
    Ok(())
}
