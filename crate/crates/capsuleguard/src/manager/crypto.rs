//! Key handling and payload sealing for the capsule store.
//!
//! Every capsule payload is encrypted with ChaCha20-Poly1305. The
//! associated data binds the ciphertext to the capsule's canonical policy
//! text and lineage, so swapping either on disk makes decryption fail
//! rather than silently serving bytes under the wrong policy.
//!
//! Nonces are *synthetic*: derived from the key and the message rather than
//! drawn from a counter or an RNG. A nonce therefore repeats only when key,
//! associated data, and plaintext are all identical — which produces the
//! identical ciphertext, not a two-time pad. The scheme deliberately makes
//! sealing deterministic: capsule ids are content-derived, and re-uploading
//! the same data under the same policy must yield the same id (and be
//! reported as a duplicate) instead of minting a fresh capsule.

use chacha20poly1305::aead::{Aead, KeyInit, Payload};
use chacha20poly1305::{ChaCha20Poly1305, Nonce};
use hkdf::Hkdf;
use rand::RngCore;
use sha2::{Digest, Sha256};
use std::fs;
use std::io;
use std::path::Path;

/// 256-bit symmetric key.
pub type KeyBytes = [u8; 32];
/// 96-bit AEAD nonce.
pub type NonceBytes = [u8; 12];

/// Domain-separation label mixed into every synthetic nonce.
const NONCE_LABEL: &[u8] = b"capsuleguard-nonce-v1\0";

/// Decryption failure: the key is wrong or the stored bytes (ciphertext,
/// nonce, policy, or lineage) were altered. Carries no payload material.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("payload authentication failed: wrong key or tampered capsule data")]
pub struct SealError;

/// Derives the deterministic nonce for `(key, aad, plaintext)`.
fn synthetic_nonce(key: &KeyBytes, aad: &[u8], plaintext: &[u8]) -> NonceBytes {
    let mut h = Sha256::new();
    h.update(NONCE_LABEL);
    h.update(key);
    h.update(Sha256::digest(aad));
    h.update(Sha256::digest(plaintext));
    let digest = h.finalize();
    let mut nonce = [0u8; 12];
    nonce.copy_from_slice(&digest[..12]);
    nonce
}

/// Encrypts `plaintext` under `key`, binding `aad`. Returns the nonce and
/// the ciphertext (tag appended). Deterministic: identical inputs produce
/// identical output.
pub fn seal(key: &KeyBytes, aad: &[u8], plaintext: &[u8]) -> (NonceBytes, Vec<u8>) {
    let nonce = synthetic_nonce(key, aad, plaintext);
    let cipher = ChaCha20Poly1305::new(key.into());
    let ciphertext = cipher
        .encrypt(Nonce::from_slice(&nonce), Payload { msg: plaintext, aad })
        .expect("ChaCha20-Poly1305 encryption is infallible for in-memory buffers");
    (nonce, ciphertext)
}

/// Decrypts and authenticates a sealed payload. Fails if the key is wrong
/// or if ciphertext, nonce, or associated data differ from sealing time.
pub fn open(
    key: &KeyBytes,
    nonce: &NonceBytes,
    aad: &[u8],
    ciphertext: &[u8],
) -> Result<Vec<u8>, SealError> {
    let cipher = ChaCha20Poly1305::new(key.into());
    cipher
        .decrypt(Nonce::from_slice(nonce), Payload { msg: ciphertext, aad })
        .map_err(|_| SealError)
}

/// Derives the key for a capsule produced by a job, from the manager's root
/// key. Scoped per `(job, output variable)` so no two derived capsules share
/// a key.
pub fn derive_capsule_key(manager_key: &KeyBytes, job_id: &str, output_var: &str) -> KeyBytes {
    let hk = Hkdf::<Sha256>::new(None, manager_key);
    let info = format!("capsule-derivation:{job_id}:{output_var}");
    let mut okm = [0u8; 32];
    hk.expand(info.as_bytes(), &mut okm)
        .expect("32 bytes is a valid HKDF-SHA256 output length");
    okm
}

/// Generates a fresh random 256-bit key from the operating system RNG.
pub fn generate_key() -> KeyBytes {
    let mut key = [0u8; 32];
    rand::rngs::OsRng.fill_bytes(&mut key);
    key
}

/// Hex-encodes a key for storage in a keyfile.
pub fn key_to_hex(key: &KeyBytes) -> String {
    hex::encode(key)
}

/// Parses a 64-hex-digit key, tolerating surrounding whitespace.
pub fn key_from_hex(text: &str) -> Option<KeyBytes> {
    let bytes = hex::decode(text.trim()).ok()?;
    let arr: KeyBytes = bytes.try_into().ok()?;
    Some(arr)
}

/// Reads a key from a keyfile (single hex line).
pub fn read_keyfile(path: &Path) -> io::Result<KeyBytes> {
    let text = fs::read_to_string(path)?;
    key_from_hex(&text).ok_or_else(|| {
        io::Error::new(
            io::ErrorKind::InvalidData,
            format!("{} does not hold a 64-hex-digit key", path.display()),
        )
    })
}

/// Writes a key to a keyfile, owner-readable only on Unix.
pub fn write_keyfile(path: &Path, key: &KeyBytes) -> io::Result<()> {
    fs::write(path, key_to_hex(key) + "\n")?;
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        fs::set_permissions(path, fs::Permissions::from_mode(0o600))?;
    }
    Ok(())
}

/// Reads the key from `path`, creating it with a fresh random key first if
/// the file does not exist.
pub fn read_or_init_keyfile(path: &Path) -> io::Result<KeyBytes> {
    if path.exists() {
        read_keyfile(path)
    } else {
        let key = generate_key();
        write_keyfile(path, &key)?;
        Ok(key)
    }
}
