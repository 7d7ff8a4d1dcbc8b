//! Canonical prefix code over `u32` symbols.
//!
//! Serialized form: used-symbol count, `(symbol, length)` pairs in symbol
//! order, number of coded symbols, number of payload bits, payload bytes.
//! A single-symbol alphabet gets length 0 and emits no payload.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};

use crate::wire::{Reader, Writer};

use super::CodecError;

const MAX_CODE_LEN: u8 = 32;

/// Code lengths per symbol for the given frequencies, capped at 32 bits by
/// flattening the frequencies until the tree is shallow enough.
fn code_lengths(freqs: &BTreeMap<u32, u64>) -> BTreeMap<u32, u8> {
    let symbols: Vec<u32> = freqs.keys().copied().collect();
    if symbols.len() == 1 {
        return BTreeMap::from([(symbols[0], 0)]);
    }
    let mut weights: Vec<u64> = freqs.values().copied().collect();
    loop {
        let lengths = tree_depths(&weights);
        if lengths.iter().all(|&l| l <= MAX_CODE_LEN as usize) {
            #[allow(clippy::cast_possible_truncation)]
            return symbols.iter().copied().zip(lengths.into_iter().map(|l| l as u8)).collect();
        }
        for w in &mut weights {
            *w = (*w >> 1).max(1);
        }
    }
}

fn tree_depths(weights: &[u64]) -> Vec<usize> {
    let n = weights.len();
    // parent links for leaves 0..n and internal nodes n..
    let mut parent = vec![usize::MAX; 2 * n - 1];
    let mut heap: BinaryHeap<Reverse<(u64, usize)>> =
        weights.iter().enumerate().map(|(i, &w)| Reverse((w, i))).collect();
    let mut next = n;
    while heap.len() > 1 {
        let Reverse((wa, a)) = heap.pop().expect("two nodes");
        let Reverse((wb, b)) = heap.pop().expect("two nodes");
        parent[a] = next;
        parent[b] = next;
        heap.push(Reverse((wa + wb, next)));
        next += 1;
    }
    let mut depth = vec![0usize; 2 * n - 1];
    for node in (0..2 * n - 2).rev() {
        depth[node] = depth[parent[node]] + 1;
    }
    depth.truncate(n);
    depth
}

/// Canonical code words, assigned in order of (length, symbol).
fn canonical_codes(lengths: &BTreeMap<u32, u8>) -> BTreeMap<u32, (u32, u8)> {
    let mut order: Vec<(u8, u32)> = lengths.iter().map(|(&s, &l)| (l, s)).collect();
    order.sort_unstable();
    let mut codes = BTreeMap::new();
    let mut code: u64 = 0;
    let mut prev_len = order.first().map_or(0, |o| o.0);
    for (len, sym) in order {
        code <<= len - prev_len;
        prev_len = len;
        #[allow(clippy::cast_possible_truncation)]
        codes.insert(sym, (code as u32, len));
        code += 1;
    }
    codes
}

struct BitWriter {
    bytes: Vec<u8>,
    acc: u64,
    fill: u32,
    total: u64,
}

impl BitWriter {
    fn new() -> Self {
        Self {
            bytes: Vec::new(),
            acc: 0,
            fill: 0,
            total: 0,
        }
    }

    fn push(&mut self, code: u32, len: u8) {
        if len == 0 {
            return;
        }
        self.acc = (self.acc << len) | u64::from(code);
        self.fill += u32::from(len);
        self.total += u64::from(len);
        while self.fill >= 8 {
            self.fill -= 8;
            #[allow(clippy::cast_possible_truncation)]
            self.bytes.push((self.acc >> self.fill) as u8);
        }
        self.acc &= (1u64 << self.fill) - 1;
    }

    fn finish(mut self) -> (Vec<u8>, u64) {
        if self.fill > 0 {
            #[allow(clippy::cast_possible_truncation)]
            self.bytes.push((self.acc << (8 - self.fill)) as u8);
        }
        (self.bytes, self.total)
    }
}

/// Appends the code table and the coded `symbols` to `w`.
pub fn encode(symbols: &[u32], w: &mut Writer) {
    let mut freqs: BTreeMap<u32, u64> = BTreeMap::new();
    for &s in symbols {
        *freqs.entry(s).or_default() += 1;
    }
    let lengths = if freqs.is_empty() { BTreeMap::new() } else { code_lengths(&freqs) };
    let codes = canonical_codes(&lengths);

    w.u32(u32::try_from(lengths.len()).expect("alphabet fits u32"));
    for (&s, &l) in &lengths {
        w.u32(s).u8(l);
    }
    let mut bits = BitWriter::new();
    for s in symbols {
        let (code, len) = codes[s];
        bits.push(code, len);
    }
    let (payload, nbits) = bits.finish();
    w.u64(symbols.len() as u64).u64(nbits).bytes(&payload);
}

/// Decodes a block written by [`encode`].
pub fn decode(r: &mut Reader<'_>) -> Result<Vec<u32>, CodecError> {
    let used = r.u32()? as usize;
    let mut lengths: BTreeMap<u32, u8> = BTreeMap::new();
    for _ in 0..used {
        let s = r.u32()?;
        let l = r.u8()?;
        if l > MAX_CODE_LEN || lengths.insert(s, l).is_some() {
            return Err(CodecError::Corrupt("prefix code table".into()));
        }
    }
    let count = usize::try_from(r.u64()?).map_err(|_| CodecError::Corrupt("symbol count".into()))?;
    let nbits = r.u64()?;
    let payload = r.take(usize::try_from(nbits.div_ceil(8)).map_err(|_| CodecError::Corrupt("bit count".into()))?)?;

    if count == 0 {
        return Ok(Vec::new());
    }
    if lengths.len() == 1 {
        let (&s, &l) = lengths.iter().next().expect("one entry");
        if l != 0 {
            return Err(CodecError::Corrupt("single-symbol code".into()));
        }
        return Ok(vec![s; count]);
    }
    if lengths.values().any(|&l| l == 0) {
        return Err(CodecError::Corrupt("zero-length code".into()));
    }

    // per-length first code, and symbols sorted canonically
    let mut order: Vec<(u8, u32)> = lengths.iter().map(|(&s, &l)| (l, s)).collect();
    order.sort_unstable();
    let sorted: Vec<u32> = order.iter().map(|o| o.1).collect();
    let max_len = order.last().map_or(0, |o| o.0) as usize;
    let mut count_at = vec![0u64; max_len + 1];
    for &(l, _) in &order {
        count_at[l as usize] += 1;
    }
    let mut first_code = vec![0u64; max_len + 1];
    let mut first_index = vec![0u64; max_len + 1];
    let (mut code, mut index) = (0u64, 0u64);
    for len in 1..=max_len {
        code = (code + count_at[len - 1]) << 1;
        first_code[len] = code;
        first_index[len] = index;
        index += count_at[len];
    }

    let mut out = Vec::with_capacity(count);
    let mut bitpos: u64 = 0;
    let bit = |pos: u64| (payload[(pos >> 3) as usize] >> (7 - (pos & 7))) & 1;
    for _ in 0..count {
        let mut code = 0u64;
        let mut len = 0usize;
        loop {
            if bitpos >= nbits || len >= max_len {
                return Err(CodecError::Corrupt("prefix-coded payload".into()));
            }
            code = (code << 1) | u64::from(bit(bitpos));
            bitpos += 1;
            len += 1;
            let offset = code.wrapping_sub(first_code[len]);
            if code >= first_code[len] && offset < count_at[len] {
                #[allow(clippy::cast_possible_truncation)]
                out.push(sorted[(first_index[len] + offset) as usize]);
                break;
            }
        }
    }
    Ok(out)
}
