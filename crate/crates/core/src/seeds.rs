//! Deterministic seed derivation.
//!
//! All randomness in a run flows from one root seed through a fixed split
//! scheme: root -> iteration -> prompt -> rollout -> branch. Sub-seeds are
//! derived with a splitmix64 hash so that parallel workers can be handed
//! precomputed seeds and the results do not depend on scheduling order.

/// One round of the splitmix64 mixing function.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child seed from a parent seed and a stream index.
pub fn derive(parent: u64, stream: u64) -> u64 {
    splitmix64(parent ^ splitmix64(stream.wrapping_add(0xA076_1D64_78BD_642F)))
}

/// Derive a child seed from a parent and two stream indices (e.g. trigger
/// step and branch index).
pub fn derive2(parent: u64, a: u64, b: u64) -> u64 {
    derive(derive(parent, a), b)
}
