use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    hex(&h.finalize())
}

pub fn hex(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

pub fn f32s_to_le_bytes(values: &[f32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * 4);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn digest_f32s(values: &[f32]) -> String {
    sha256_hex(&f32s_to_le_bytes(values))
}

/// Incremental digest over several f32 slices (parameter groups etc.).
pub struct StreamDigest(Sha256);

impl StreamDigest {
    pub fn new() -> Self {
        Self(Sha256::new())
    }

    pub fn update_f32s(&mut self, values: &[f32]) {
        for v in values {
            self.0.update(v.to_le_bytes());
        }
    }

    pub fn update_bytes(&mut self, bytes: &[u8]) {
        self.0.update(bytes);
    }

    pub fn finish(self) -> String {
        hex(&self.0.finalize())
    }
}

impl Default for StreamDigest {
    fn default() -> Self {
        Self::new()
    }
}
