use super::AudioClip;
use crate::error::{Error, Result};

/// 62.5 ms of context at 16 kHz.
pub const DEFAULT_BLOCK_LEN: usize = 1000;
/// 37.5 ms of output per block at 16 kHz; equals the center length.
pub const DEFAULT_HOP: usize = 600;

/// Fixed-length overlapping windows whose center regions tile a clip.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockStream {
    pub blocks: Vec<Vec<f64>>,
    pub block_len: usize,
    pub hop: usize,
    /// Equal to `hop`: each block contributes `center_len` output samples.
    pub center_len: usize,
    /// Offset of the center region inside a block.
    pub pad_left: usize,
    /// Length of the clip before padding.
    pub true_len: usize,
}

impl BlockStream {
    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// Start of block `k` in the coordinates of the unpadded clip (may be negative).
    pub fn block_start(&self, k: usize) -> isize {
        (k * self.hop) as isize - self.pad_left as isize
    }

    pub fn center(&self, k: usize) -> &[f64] {
        &self.blocks[k][self.pad_left..self.pad_left + self.center_len]
    }

    /// Concatenates per-block center outputs and trims to the original length.
    pub fn reassemble<C: AsRef<[f64]>>(&self, centers: &[C]) -> Result<Vec<f64>> {
        if centers.len() != self.blocks.len() {
            return Err(Error::Shape(format!(
                "expected {} center regions, got {}",
                self.blocks.len(),
                centers.len()
            )));
        }
        let mut out = Vec::with_capacity(self.blocks.len() * self.center_len);
        for c in centers {
            let c = c.as_ref();
            if c.len() != self.center_len {
                return Err(Error::Shape(format!(
                    "center region of length {} (expected {})",
                    c.len(),
                    self.center_len
                )));
            }
            out.extend_from_slice(c);
        }
        out.truncate(self.true_len);
        Ok(out)
    }

    /// Reassembles the unmodified centers; the identity on the framed clip.
    pub fn reassemble_centers(&self) -> Vec<f64> {
        let centers: Vec<&[f64]> = (0..self.len()).map(|k| self.center(k)).collect();
        self.reassemble(&centers).expect("centers are well formed")
    }
}

/// Mirror index into `[0, len)` without repeating the edge sample.
fn reflect_index(i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let m = i.rem_euclid(period);
    if m < len as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// Frames a clip into `block_len` windows advancing by `hop`.
///
/// The clip is reflect-padded by `(block_len - hop) / 2` on the left so that
/// the center regions tile the clip; the right edge is reflect-padded by the
/// same amount and the final block is zero-filled beyond that.
pub fn frame_blocks(clip: &AudioClip, block_len: usize, hop: usize) -> Result<BlockStream> {
    if hop == 0 || block_len < hop {
        return Err(Error::Config(format!(
            "need block_len >= hop > 0, got block_len {block_len}, hop {hop}"
        )));
    }
    let n = clip.len();
    if n == 0 {
        return Err(Error::DegenerateInput("cannot frame an empty clip".into()));
    }
    let pad = (block_len - hop) / 2;
    let n_blocks = n.div_ceil(hop);
    let padded_len = (n_blocks - 1) * hop + block_len;
    let padded: Vec<f64> = (0..padded_len)
        .map(|p| {
            let i = p as isize - pad as isize;
            if i < n as isize + pad as isize {
                clip.samples[reflect_index(i, n)]
            } else {
                0.0
            }
        })
        .collect();
    let blocks = (0..n_blocks)
        .map(|k| padded[k * hop..k * hop + block_len].to_vec())
        .collect();
    Ok(BlockStream {
        blocks,
        block_len,
        hop,
        center_len: hop,
        pad_left: pad,
        true_len: n,
    })
}
