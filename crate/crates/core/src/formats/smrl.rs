//! SMRL v1: text run-length masks.
//!
//! ```text
//! SMRL 1 <height> <width> <num_objects>
//! obj <id> <start>:<length> <start>:<length> ...
//! ```
//!
//! Runs cover row-major foreground pixels, starts are 0-based, ascending and
//! separated by at least one background pixel. Objects in one file never
//! overlap. Encoding is canonical, so any accepted input re-encodes to the
//! same bytes.

use super::{parse_canonical_u64, parse_canonical_usize, FormatError, MAX_MASK_PIXELS};
use crate::mask::ObjectMask;

/// All object masks of one frame, in file order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskFrame {
    pub height: usize,
    pub width: usize,
    pub objects: Vec<(u32, ObjectMask)>,
}

impl MaskFrame {
    pub fn masks(&self) -> Vec<ObjectMask> {
        self.objects.iter().map(|(_, m)| m.clone()).collect()
    }

    pub fn ids(&self) -> Vec<u32> {
        self.objects.iter().map(|(id, _)| *id).collect()
    }
}

pub fn encode_mask(
    height: usize,
    width: usize,
    objects: &[(u32, &ObjectMask)],
) -> Result<String, FormatError> {
    let mut taken = vec![false; height * width];
    let mut seen_ids = Vec::with_capacity(objects.len());
    let mut out = format!("SMRL 1 {height} {width} {}\n", objects.len());
    for (line, (id, mask)) in objects.iter().enumerate() {
        if mask.shape() != (height, width) {
            return Err(FormatError::MaskShape {
                expected: (height, width),
                actual: mask.shape(),
            });
        }
        if seen_ids.contains(id) {
            return Err(FormatError::MaskDuplicateObject(*id));
        }
        seen_ids.push(*id);
        out.push_str("obj ");
        out.push_str(&id.to_string());
        let bits = mask.bits();
        let mut i = 0;
        while i < bits.len() {
            if !bits[i] {
                i += 1;
                continue;
            }
            let start = i;
            while i < bits.len() && bits[i] {
                if taken[i] {
                    return Err(FormatError::MaskObjectsOverlap { line: line + 2 });
                }
                taken[i] = true;
                i += 1;
            }
            out.push_str(&format!(" {start}:{}", i - start));
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn decode_mask(bytes: &[u8]) -> Result<MaskFrame, FormatError> {
    let text = std::str::from_utf8(bytes).map_err(|_| FormatError::Encoding)?;
    let body = text.strip_suffix('\n').ok_or_else(|| FormatError::MaskLine {
        line: text.lines().count().max(1),
        reason: "missing trailing newline".into(),
    })?;
    let mut lines = body.split('\n');
    let header = lines.next().unwrap_or_default();
    let tokens: Vec<&str> = header.split(' ').collect();
    if tokens.len() != 5 || tokens[0] != "SMRL" {
        return Err(FormatError::MaskHeader(header.chars().take(64).collect()));
    }
    if tokens[1] != "1" {
        return Err(FormatError::MaskVersion(tokens[1].chars().take(16).collect()));
    }
    let dim = |t: &str, what: &str| {
        parse_canonical_usize(t)
            .filter(|&v| v > 0)
            .ok_or_else(|| FormatError::MaskHeader(format!("invalid {what} {t:?}")))
    };
    let height = dim(tokens[2], "height")?;
    let width = dim(tokens[3], "width")?;
    let declared = parse_canonical_usize(tokens[4])
        .ok_or_else(|| FormatError::MaskHeader(format!("invalid object count {:?}", tokens[4])))?;
    let pixels = height
        .checked_mul(width)
        .filter(|&p| p <= MAX_MASK_PIXELS)
        .ok_or_else(|| FormatError::MaskHeader(format!("{height}x{width} is too large")))?;

    let mut taken = vec![false; pixels];
    let mut objects: Vec<(u32, ObjectMask)> = Vec::new();
    for (offset, line_text) in lines.enumerate() {
        let line = offset + 2;
        if objects.len() == declared {
            return Err(FormatError::MaskObjectCount {
                declared,
                found: declared + 1,
            });
        }
        let malformed = |reason: &str| FormatError::MaskLine {
            line,
            reason: reason.to_string(),
        };
        let mut parts = line_text.split(' ');
        if parts.next() != Some("obj") {
            return Err(malformed("expected \"obj <id>\""));
        }
        let id = parts
            .next()
            .and_then(parse_canonical_u64)
            .and_then(|v| u32::try_from(v).ok())
            .ok_or_else(|| malformed("invalid object id"))?;
        if objects.iter().any(|(existing, _)| *existing == id) {
            return Err(FormatError::MaskDuplicateObject(id));
        }
        let mut bits = vec![false; pixels];
        let mut next_free = 0usize;
        let mut first = true;
        for pair in parts {
            let (s, l) = pair.split_once(':').ok_or_else(|| malformed("expected start:length"))?;
            let start = parse_canonical_usize(s).ok_or_else(|| malformed("invalid run start"))?;
            let len = parse_canonical_usize(l)
                .filter(|&l| l > 0)
                .ok_or_else(|| malformed("invalid run length"))?;
            if !first && start <= next_free {
                return Err(FormatError::MaskRunOrder { line });
            }
            let end = start
                .checked_add(len)
                .filter(|&e| e <= pixels)
                .ok_or(FormatError::MaskRunBounds { line, pixels })?;
            for i in start..end {
                if taken[i] {
                    return Err(FormatError::MaskObjectsOverlap { line });
                }
                taken[i] = true;
                bits[i] = true;
            }
            next_free = end;
            first = false;
        }
        let mask = ObjectMask::from_bits(height, width, bits)
            .map_err(|e| malformed(&e.to_string()))?;
        objects.push((id, mask));
    }
    if objects.len() != declared {
        return Err(FormatError::MaskObjectCount {
            declared,
            found: objects.len(),
        });
    }
    Ok(MaskFrame {
        height,
        width,
        objects,
    })
}
