//! Digests and a keyed-digest signature stand-in.
//!
//! Signatures are `sha256(secret || message)`. Verification goes through a
//! [`KeyDirectory`] that maps each public key to its secret, which gives the
//! same accept/reject contract as a real scheme inside a closed simulation:
//! a signature verifies only if it was produced with the registered secret.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest as _, Sha256};

/// A 32-byte SHA-256 digest.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Digest([u8; 32]);

impl Digest {
    pub const ZERO: Digest = Digest([0u8; 32]);

    pub fn of(bytes: &[u8]) -> Self {
        DigestBuilder::new().bytes(bytes).finish()
    }

    pub fn from_bytes(bytes: [u8; 32]) -> Self {
        Digest(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Option<Self> {
        let raw = hex::decode(s).ok()?;
        let arr: [u8; 32] = raw.try_into().ok()?;
        Some(Digest(arr))
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({}..)", &self.to_hex()[..12])
    }
}

impl Serialize for Digest {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Digest {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Digest::from_hex(&s).ok_or_else(|| serde::de::Error::custom("expected 64 hex chars"))
    }
}

/// Incremental hasher with length-prefixed fields, so that concatenation
/// ambiguities cannot produce equal digests for different field lists.
pub struct DigestBuilder(Sha256);

impl DigestBuilder {
    pub fn new() -> Self {
        DigestBuilder(Sha256::new())
    }

    pub fn tagged(tag: &str) -> Self {
        Self::new().field(tag.as_bytes())
    }

    /// Raw bytes with no length prefix.
    pub fn bytes(mut self, bytes: &[u8]) -> Self {
        self.0.update(bytes);
        self
    }

    pub fn field(mut self, bytes: &[u8]) -> Self {
        self.0.update((bytes.len() as u64).to_be_bytes());
        self.0.update(bytes);
        self
    }

    pub fn str(self, s: &str) -> Self {
        self.field(s.as_bytes())
    }

    pub fn u64(mut self, v: u64) -> Self {
        self.0.update(v.to_be_bytes());
        self
    }

    pub fn digest(self, d: &Digest) -> Self {
        self.bytes(&d.0)
    }

    pub fn finish(self) -> Digest {
        let out = self.0.finalize();
        let mut arr = [0u8; 32];
        arr.copy_from_slice(&out);
        Digest(arr)
    }
}

impl Default for DigestBuilder {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Clone, PartialEq, Eq)]
pub struct SecretKey([u8; 32]);

impl SecretKey {
    /// Deterministic key derivation from a run seed and a label.
    pub fn derive(seed: u64, label: &str) -> Self {
        SecretKey(
            DigestBuilder::tagged("secret-key")
                .u64(seed)
                .str(label)
                .finish()
                .0,
        )
    }

    pub fn public_key(&self) -> PublicKey {
        PublicKey(DigestBuilder::tagged("public-key").bytes(&self.0).finish())
    }

    pub fn sign(&self, message: &Digest) -> Signature {
        Signature(
            DigestBuilder::tagged("signature")
                .bytes(&self.0)
                .digest(message)
                .finish(),
        )
    }
}

impl fmt::Debug for SecretKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SecretKey(..)")
    }
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PublicKey(Digest);

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PublicKey({}..)", &self.0.to_hex()[..8])
    }
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Signature(Digest);

impl Signature {
    /// A signature value nobody produced; handy for forgery tests.
    pub fn forged(seed: u64) -> Self {
        Signature(DigestBuilder::tagged("forged").u64(seed).finish())
    }
}

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Signature({}..)", &self.0.to_hex()[..8])
    }
}

/// Verification oracle for the keyed-digest scheme.
#[derive(Clone, Debug, Default)]
pub struct KeyDirectory {
    secrets: BTreeMap<PublicKey, SecretKey>,
}

impl KeyDirectory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, secret: SecretKey) -> PublicKey {
        let pk = secret.public_key();
        self.secrets.insert(pk, secret);
        pk
    }

    pub fn contains(&self, pk: &PublicKey) -> bool {
        self.secrets.contains_key(pk)
    }

    pub fn verify(&self, pk: &PublicKey, message: &Digest, sig: &Signature) -> bool {
        self.secrets
            .get(pk)
            .is_some_and(|sk| sk.sign(message) == *sig)
    }

    /// Directory restricted to the given keys.
    pub fn restricted_to<'a>(&self, keys: impl IntoIterator<Item = &'a PublicKey>) -> Self {
        let secrets = keys
            .into_iter()
            .filter_map(|pk| self.secrets.get(pk).map(|sk| (*pk, sk.clone())))
            .collect();
        KeyDirectory { secrets }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sign_and_verify() {
        let mut dir = KeyDirectory::new();
        let sk = SecretKey::derive(1, "alice");
        let pk = dir.register(sk.clone());
        let msg = Digest::of(b"bundle");
        let sig = sk.sign(&msg);
        assert!(dir.verify(&pk, &msg, &sig));
        assert!(!dir.verify(&pk, &Digest::of(b"other"), &sig));
        assert!(!dir.verify(&pk, &msg, &Signature::forged(0)));
    }

    #[test]
    fn unknown_key_never_verifies() {
        let dir = KeyDirectory::new();
        let sk = SecretKey::derive(1, "mallory");
        let msg = Digest::of(b"x");
        assert!(!dir.verify(&sk.public_key(), &msg, &sk.sign(&msg)));
    }

    #[test]
    fn length_prefix_separates_fields() {
        let a = DigestBuilder::new().str("ab").str("c").finish();
        let b = DigestBuilder::new().str("a").str("bc").finish();
        assert_ne!(a, b);
    }

    #[test]
    fn hex_round_trip() {
        let d = Digest::of(b"hello");
        assert_eq!(Digest::from_hex(&d.to_hex()), Some(d));
        assert_eq!(Digest::from_hex("zz"), None);
    }
}
