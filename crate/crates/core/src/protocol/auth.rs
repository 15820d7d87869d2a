//! Schnorr signatures over Ristretto255 for session authentication.

use curve25519_dalek::ristretto::{CompressedRistretto, RistrettoPoint};
use curve25519_dalek::scalar::Scalar as DalekScalar;
use sha2::{Digest, Sha512};

use crate::mixnet::{KeyElement, Scalar};

pub const SIGNATURE_LEN: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Signature(pub [u8; SIGNATURE_LEN]);

fn challenge(r: &[u8; 32], public: &KeyElement, msg: &[u8]) -> DalekScalar {
    let wide: [u8; 64] = Sha512::new()
        .chain_update(b"LLUAD-sig")
        .chain_update(r)
        .chain_update(public.as_bytes())
        .chain_update(msg)
        .finalize()
        .into();
    DalekScalar::from_bytes_mod_order_wide(&wide)
}

/// Deterministic nonce derived from the secret and the message.
pub fn sign(secret: &Scalar, msg: &[u8]) -> Signature {
    let wide: [u8; 64] =
        Sha512::new().chain_update(b"LLUAD-nonce").chain_update(secret.to_bytes()).chain_update(msg).finalize().into();
    let k = DalekScalar::from_bytes_mod_order_wide(&wide);
    let r = RistrettoPoint::mul_base(&k).compress().to_bytes();
    let e = challenge(&r, &secret.public(), msg);
    let s = k + e * secret.inner();
    let mut out = [0u8; SIGNATURE_LEN];
    out[..32].copy_from_slice(&r);
    out[32..].copy_from_slice(&s.to_bytes());
    Signature(out)
}

pub fn verify(public: &KeyElement, msg: &[u8], sig: &Signature) -> bool {
    let r: [u8; 32] = sig.0[..32].try_into().expect("32");
    let Some(r_point) = CompressedRistretto(r).decompress() else { return false };
    let s: Option<DalekScalar> = DalekScalar::from_canonical_bytes(sig.0[32..].try_into().expect("32")).into();
    let Some(s) = s else { return false };
    let Some(p) = CompressedRistretto(*public.as_bytes()).decompress() else { return false };
    let e = challenge(&r, public, msg);
    RistrettoPoint::mul_base(&s) == r_point + p * e
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn sign_and_verify() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let key = Scalar::random(&mut rng);
        let other = Scalar::random(&mut rng);
        let sig = sign(&key, b"hello");
        assert!(verify(&key.public(), b"hello", &sig));
        assert!(!verify(&key.public(), b"hellp", &sig));
        assert!(!verify(&other.public(), b"hello", &sig));
        let mut bad = sig;
        bad.0[40] ^= 1;
        assert!(!verify(&key.public(), b"hello", &bad));
    }
}
