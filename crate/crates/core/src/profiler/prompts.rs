use std::collections::BTreeMap;

use sha2::{Digest, Sha256};

pub const SYSTEM: &str = include_str!("../../prompts/system.txt");
pub const PROFILE_USER: &str = include_str!("../../prompts/profile_user.txt");
pub const OUTPUT_FORMAT: &str = include_str!("../../prompts/output_format.txt");
pub const SYNTHESIS: &str = include_str!("../../prompts/synthesis.txt");
const MANIFEST: &str = include_str!("../../prompts/SHA256SUMS");

const ASSETS: [(&str, &str); 4] = [
    ("system.txt", SYSTEM),
    ("profile_user.txt", PROFILE_USER),
    ("output_format.txt", OUTPUT_FORMAT),
    ("synthesis.txt", SYNTHESIS),
];

/// sha256 of each prompt asset, keyed by file name. Written into run
/// manifests.
pub fn checksums() -> BTreeMap<String, String> {
    ASSETS
        .iter()
        .map(|(name, body)| (name.to_string(), hex::encode(Sha256::digest(body.as_bytes()))))
        .collect()
}

/// The checksums recorded in the shipped `SHA256SUMS` file.
pub fn manifest() -> BTreeMap<String, String> {
    MANIFEST
        .lines()
        .filter_map(|l| l.split_once("  "))
        .map(|(hash, name)| (name.trim().to_string(), hash.to_string()))
        .collect()
}
