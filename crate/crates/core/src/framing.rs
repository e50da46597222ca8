//! Length-framed concatenation for AEAD-interior payloads. These blobs are
//! always confidentiality- and integrity-protected by an outer layer; the
//! framing only needs to be unambiguous and strict.

/// `u32 BE length || bytes` per part.
pub(crate) fn pack(parts: &[&[u8]]) -> Vec<u8> {
    let total = parts.iter().map(|p| 4 + p.len()).sum();
    let mut out = Vec::with_capacity(total);
    for part in parts {
        out.extend_from_slice(&(part.len() as u32).to_be_bytes());
        out.extend_from_slice(part);
    }
    out
}

/// Exactly `N` parts, no trailing bytes.
pub(crate) fn unpack<const N: usize>(mut bytes: &[u8]) -> Option<[&[u8]; N]> {
    let mut out = [&bytes[0..0]; N];
    for slot in out.iter_mut() {
        if bytes.len() < 4 {
            return None;
        }
        let len = u32::from_be_bytes(bytes[..4].try_into().ok()?) as usize;
        if bytes.len() < 4 + len {
            return None;
        }
        *slot = &bytes[4..4 + len];
        bytes = &bytes[4 + len..];
    }
    if bytes.is_empty() {
        Some(out)
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_and_strictness() {
        let packed = pack(&[b"ab", b"", b"xyz"]);
        let [a, b, c] = unpack::<3>(&packed).unwrap();
        assert_eq!((a, b, c), (&b"ab"[..], &b""[..], &b"xyz"[..]));
        assert!(unpack::<2>(&packed).is_none());
        assert!(unpack::<4>(&packed).is_none());
        assert!(unpack::<3>(&packed[..packed.len() - 1]).is_none());
    }
}
