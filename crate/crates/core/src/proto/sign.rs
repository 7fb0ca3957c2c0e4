//! Payload signing: Ed25519 over the SHA-256 digest of the payload bytes.
//! Only signed payloads may be executed by clients.

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use ed25519_dalek::{Signature, Signer, SigningKey, Verifier, VerifyingKey};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ProtoError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignedPayload {
    /// base64 payload bytes
    pub payload: String,
    /// sha256 hex of the payload bytes
    pub digest: String,
    /// hex Ed25519 signature over the digest bytes
    pub signature: String,
    /// hex of the signer's public key
    pub signer_key_id: String,
}

impl SignedPayload {
    pub fn bytes(&self) -> Result<Vec<u8>, ProtoError> {
        B64.decode(&self.payload)
            .map_err(|e| ProtoError::Malformed { offset: 0, reason: format!("payload base64: {e}") })
    }
}

pub struct KeyPair {
    signing: SigningKey,
}

impl KeyPair {
    pub fn generate() -> KeyPair {
        KeyPair { signing: SigningKey::generate(&mut rand::rngs::OsRng) }
    }

    pub fn from_secret_hex(hex_str: &str) -> Result<KeyPair, ProtoError> {
        let bytes = hex::decode(hex_str.trim())
            .map_err(|e| ProtoError::Config(format!("bad secret key hex: {e}")))?;
        let arr: [u8; 32] = bytes
            .try_into()
            .map_err(|_| ProtoError::Config("secret key must be 32 bytes".into()))?;
        Ok(KeyPair { signing: SigningKey::from_bytes(&arr) })
    }

    pub fn secret_hex(&self) -> String {
        hex::encode(self.signing.to_bytes())
    }

    pub fn public_hex(&self) -> String {
        hex::encode(self.signing.verifying_key().to_bytes())
    }
}

pub fn sign(payload: &[u8], key: &KeyPair) -> SignedPayload {
    let digest = Sha256::digest(payload);
    let signature = key.signing.sign(&digest);
    SignedPayload {
        payload: B64.encode(payload),
        digest: hex::encode(digest),
        signature: hex::encode(signature.to_bytes()),
        signer_key_id: key.public_hex(),
    }
}

/// True iff the payload decodes, its digest matches, the signer key id is the
/// expected project key, and the signature verifies. Never panics on
/// malformed input.
pub fn verify(sp: &SignedPayload, public_key_hex: &str) -> bool {
    if sp.signer_key_id != public_key_hex {
        return false;
    }
    let Ok(payload) = sp.bytes() else { return false };
    let digest = Sha256::digest(&payload);
    if hex::encode(digest) != sp.digest {
        return false;
    }
    let Ok(key_bytes) = hex::decode(public_key_hex) else { return false };
    let Ok(key_arr): Result<[u8; 32], _> = key_bytes.try_into() else { return false };
    let Ok(key) = VerifyingKey::from_bytes(&key_arr) else { return false };
    let Ok(sig_bytes) = hex::decode(&sp.signature) else { return false };
    let Ok(sig_arr): Result<[u8; 64], _> = sig_bytes.try_into() else { return false };
    key.verify(&digest, &Signature::from_bytes(&sig_arr)).is_ok()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sign_then_verify() {
        let key = KeyPair::generate();
        let sp = sign(b"payload bytes", &key);
        assert!(verify(&sp, &key.public_hex()));
    }

    #[test]
    fn any_payload_byte_flip_fails() {
        let key = KeyPair::generate();
        let payload = b"some interesting payload".to_vec();
        let sp = sign(&payload, &key);
        for i in 0..payload.len() {
            let mut tampered = payload.clone();
            tampered[i] ^= 0x40;
            let mut sp2 = sp.clone();
            sp2.payload = B64.encode(&tampered);
            assert!(!verify(&sp2, &key.public_hex()), "flip at {i}");
        }
    }

    #[test]
    fn wrong_public_key_fails() {
        let key = KeyPair::generate();
        let other = KeyPair::generate();
        let sp = sign(b"payload", &key);
        assert!(!verify(&sp, &other.public_hex()));
    }

    #[test]
    fn garbage_fields_fail_without_panic() {
        let sp = SignedPayload {
            payload: "!!!not base64!!!".into(),
            digest: "zz".into(),
            signature: "nope".into(),
            signer_key_id: "key".into(),
        };
        assert!(!verify(&sp, "key"));
    }

    #[test]
    fn secret_key_round_trip() {
        let key = KeyPair::generate();
        let restored = KeyPair::from_secret_hex(&key.secret_hex()).unwrap();
        assert_eq!(key.public_hex(), restored.public_hex());
        let sp = sign(b"x", &restored);
        assert!(verify(&sp, &key.public_hex()));
    }
}
