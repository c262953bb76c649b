//! HTTP client for an ANU-style quantum RNG service.
//!
//! The service answers `GET <endpoint>?length=<count>` with a JSON body
//! `{"data": ["a3", "ff", ...], "success": true}` where each token is a
//! hexadecimal string. Fetched bits are buffered so repeated small requests
//! amortize one HTTP round trip.

use std::collections::VecDeque;
use std::time::Duration;

use serde::Deserialize;

use crate::bits::{hex_to_bits, BitString};
use crate::error::{Error, Result};

#[derive(Debug, Deserialize)]
struct QrngResponse {
    #[serde(default)]
    data: Option<Vec<String>>,
    #[serde(default)]
    success: Option<bool>,
}

pub struct RemoteClient {
    endpoint: String,
    batch_size: usize,
    agent: ureq::Agent,
    buffer: VecDeque<bool>,
    requests_made: u64,
}

impl RemoteClient {
    pub fn new(endpoint: String, batch_size: usize, timeout: Duration) -> Self {
        let agent = ureq::AgentBuilder::new().timeout(timeout).build();
        Self {
            endpoint,
            batch_size: batch_size.max(1),
            agent,
            buffer: VecDeque::new(),
            requests_made: 0,
        }
    }

    /// Number of HTTP requests issued so far.
    pub fn requests_made(&self) -> u64 {
        self.requests_made
    }

    /// One HTTP round trip for `count` hexadecimal tokens, concatenated into
    /// bits. Does not touch the buffer.
    pub fn fetch_block(&mut self, count: usize) -> Result<BitString> {
        if count == 0 {
            return Err(Error::EmptyRequest);
        }
        let sep = if self.endpoint.contains('?') { '&' } else { '?' };
        let url = format!("{}{}length={}", self.endpoint, sep, count);
        self.requests_made += 1;
        let body = self
            .agent
            .get(&url)
            .call()
            .map_err(|e| Error::Source(format!("qrng request failed: {e}")))?
            .into_string()
            .map_err(|e| Error::Source(format!("qrng response read failed: {e}")))?;
        let parsed: QrngResponse = serde_json::from_str(&body)
            .map_err(|e| Error::Source(format!("malformed qrng response: {e}")))?;
        if parsed.success == Some(false) {
            return Err(Error::Source("qrng service reported success=false".into()));
        }
        let tokens = parsed
            .data
            .filter(|d| !d.is_empty())
            .ok_or_else(|| Error::Source("qrng response missing data array".into()))?;
        let mut bits = BitString::new();
        for token in &tokens {
            for bit in hex_to_bits(token)?.iter() {
                bits.push(bit);
            }
        }
        Ok(bits)
    }

    /// Takes `n` bits from the buffer, refilling in `batch_size`-token blocks.
    pub fn take_bits(&mut self, n: usize) -> Result<BitString> {
        if n == 0 {
            return Err(Error::EmptyRequest);
        }
        while self.buffer.len() < n {
            let block = self.fetch_block(self.batch_size)?;
            if block.is_empty() {
                return Err(Error::Source("qrng returned an empty block".into()));
            }
            self.buffer.extend(block.iter());
        }
        Ok((0..n).map(|_| self.buffer.pop_front().unwrap()).collect())
    }
}
