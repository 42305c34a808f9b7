//! 64-bit hashing primitives shared by FSM hashing and cache keys.

/// Marks a non-terminal slot (rule reference, epsilon or state header) in an
/// FSM hash transcript. Odd and far outside the byte range.
pub const SENTINEL_K: u64 = 0x9e37_79b9_7f4a_7c15;
const _: () = assert!(SENTINEL_K > 255 && SENTINEL_K % 2 == 1);

/// Stand-in hash for a rule that is part of the simple cycle being hashed.
pub const CYCLE_SENTINEL: u64 = 0xc2b2_ae3d_27d4_eb4f;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

/// Non-commutative mix of `v` into `h`.
#[inline]
pub fn hash_combine(h: u64, v: u64) -> u64 {
    let x = h.rotate_left(5) ^ v.wrapping_add(FNV_OFFSET);
    let x = x.wrapping_mul(FNV_PRIME ^ 0x5bd1_e995);
    x ^ (x >> 29)
}

pub fn hash_all(h: u64, vs: &[u64]) -> u64 {
    vs.iter().fold(h, |acc, &v| hash_combine(acc, v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a(b""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a(b"a"), 0xaf63_dc4c_8601_ec8c);
    }

    proptest! {
        #[test]
        fn combine_is_not_commutative(a in any::<u64>(), b in any::<u64>()) {
            prop_assume!(a != b);
            prop_assert_ne!(hash_combine(a, b), hash_combine(b, a));
        }
    }
}
