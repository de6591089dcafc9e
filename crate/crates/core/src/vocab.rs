//! Token vocabulary shared by prompts, completions and the policy.

use std::collections::HashMap;

use crate::error::{CoeError, Result};
use crate::event::{
    ANSWER_CLOSE, ANSWER_OPEN, DES_PREFIX, EVENT_CLOSE, EVENT_OPEN, THINK_CLOSE, THINK_OPEN,
    TIME_PREFIX,
};
use crate::world::{Lexicon, WorldConfig, QUESTION};

pub type TokenId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenKind {
    Markup,
    Word,
    Time,
}

pub const PAD: &str = "<pad>";
pub const FRAME_SEP: &str = "|";
pub const TIME_DASH: &str = "-";

const MARKUP: [&str; 11] = [
    PAD,
    FRAME_SEP,
    THINK_OPEN,
    THINK_CLOSE,
    EVENT_OPEN,
    EVENT_CLOSE,
    TIME_PREFIX,
    TIME_DASH,
    DES_PREFIX,
    ANSWER_OPEN,
    ANSWER_CLOSE,
];

#[derive(Debug, Clone)]
pub struct Vocab {
    pieces: Vec<String>,
    kinds: Vec<TokenKind>,
    index: HashMap<String, TokenId>,
    symbol_base: TokenId,
    symbol_count: usize,
    time_base: TokenId,
    time_count: usize,
    max_piece_len: usize,
}

impl Vocab {
    /// Markup, question words, option labels, time tokens (0.1 s steps) and
    /// one word per world symbol.
    pub fn new(config: &WorldConfig) -> Self {
        let mut v = Vocab {
            pieces: Vec::new(),
            kinds: Vec::new(),
            index: HashMap::new(),
            symbol_base: 0,
            symbol_count: 0,
            time_base: 0,
            time_count: 0,
            max_piece_len: 0,
        };
        for m in MARKUP {
            v.push(m, TokenKind::Markup);
        }
        for w in QUESTION {
            v.push(w, TokenKind::Word);
        }
        for label in config.option_labels() {
            v.push(&label, TokenKind::Word);
        }
        v.time_base = v.pieces.len() as TokenId;
        let max_tenths = (config.max_time() * 10.0).ceil() as u64;
        for k in 0..=max_tenths {
            v.push(&format!("{}.{}", k / 10, k % 10), TokenKind::Time);
        }
        v.time_count = max_tenths as usize + 1;
        v.symbol_base = v.pieces.len() as TokenId;
        let lexicon = Lexicon::new(config);
        for w in lexicon.words() {
            v.push(w, TokenKind::Word);
        }
        v.symbol_count = lexicon.len();
        v
    }

    fn push(&mut self, piece: &str, kind: TokenKind) {
        if self.index.contains_key(piece) {
            return;
        }
        self.index.insert(piece.to_string(), self.pieces.len() as TokenId);
        self.pieces.push(piece.to_string());
        self.kinds.push(kind);
        self.max_piece_len = self.max_piece_len.max(piece.len());
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn id(&self, piece: &str) -> Result<TokenId> {
        self.index
            .get(piece)
            .copied()
            .ok_or_else(|| CoeError::UnknownToken(piece.to_string()))
    }

    fn fixed(&self, piece: &str) -> TokenId {
        self.index[piece]
    }

    pub fn piece(&self, id: TokenId) -> &str {
        &self.pieces[id as usize]
    }

    pub fn kind(&self, id: TokenId) -> TokenKind {
        self.kinds[id as usize]
    }

    pub fn pad(&self) -> TokenId {
        self.fixed(PAD)
    }
    pub fn frame_sep(&self) -> TokenId {
        self.fixed(FRAME_SEP)
    }
    pub fn think_open(&self) -> TokenId {
        self.fixed(THINK_OPEN)
    }
    pub fn think_close(&self) -> TokenId {
        self.fixed(THINK_CLOSE)
    }
    pub fn event_open(&self) -> TokenId {
        self.fixed(EVENT_OPEN)
    }
    pub fn event_close(&self) -> TokenId {
        self.fixed(EVENT_CLOSE)
    }
    pub fn time_prefix(&self) -> TokenId {
        self.fixed(TIME_PREFIX)
    }
    pub fn time_dash(&self) -> TokenId {
        self.fixed(TIME_DASH)
    }
    pub fn des_prefix(&self) -> TokenId {
        self.fixed(DES_PREFIX)
    }
    pub fn answer_open(&self) -> TokenId {
        self.fixed(ANSWER_OPEN)
    }
    pub fn answer_close(&self) -> TokenId {
        self.fixed(ANSWER_CLOSE)
    }

    pub fn symbol_id(&self, symbol: usize) -> Result<TokenId> {
        if symbol >= self.symbol_count {
            return Err(CoeError::UnknownToken(format!("symbol #{symbol}")));
        }
        Ok(self.symbol_base + symbol as TokenId)
    }

    /// Token for a timestamp, rounded to the nearest 0.1 s.
    pub fn time_id(&self, t: f64) -> Result<TokenId> {
        let k = (t * 10.0).round();
        if k < 0.0 || k as usize >= self.time_count {
            return Err(CoeError::UnknownToken(format!("time {t}")));
        }
        Ok(self.time_base + k as TokenId)
    }

    /// Concatenates pieces, separating adjacent words with a space.
    pub fn decode(&self, ids: &[TokenId]) -> String {
        let mut out = String::new();
        let mut prev_word = false;
        for &id in ids {
            let piece = self.piece(id);
            let is_word = self.kind(id) == TokenKind::Word;
            if prev_word && (is_word || piece == TIME_PREFIX) {
                out.push(' ');
            }
            out.push_str(piece);
            prev_word = is_word;
        }
        out
    }

    /// Greedy longest-match tokenization of whitespace-separated chunks.
    pub fn encode(&self, text: &str) -> Result<Vec<TokenId>> {
        let mut ids = Vec::new();
        for chunk in text.split_whitespace() {
            let mut rest = chunk;
            while !rest.is_empty() {
                let mut matched = None;
                let mut len = self.max_piece_len.min(rest.len());
                while len > 0 {
                    if rest.is_char_boundary(len) {
                        if let Some(&id) = self.index.get(&rest[..len]) {
                            matched = Some((id, len));
                            break;
                        }
                    }
                    len -= 1;
                }
                let (id, len) = matched.ok_or_else(|| CoeError::UnknownToken(rest.to_string()))?;
                ids.push(id);
                rest = &rest[len..];
            }
        }
        Ok(ids)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event::parse_completion;

    #[test]
    fn encode_decode_roundtrip() {
        let c = WorldConfig::easy(1);
        let v = Vocab::new(&c);
        let d = c.type_description(3);
        let text = format!("<think><event>Time:0.0-1.0,Des:{d}</event> next {d}</think><answer>B</answer>");
        let ids = v.encode(&text).unwrap();
        let back = v.decode(&ids);
        assert_eq!(v.encode(&back).unwrap(), ids);
        let p = parse_completion(&back);
        assert!(p.tag_valid, "{back} {:?}", p.diagnostics);
        assert_eq!(p.chain.events[0].description, d);
    }

    #[test]
    fn time_tokens_cover_timeline() {
        let c = WorldConfig::easy(1);
        let v = Vocab::new(&c);
        assert_eq!(v.piece(v.time_id(2.5).unwrap()), "2.5");
        assert_eq!(v.piece(v.time_id(0.0).unwrap()), "0.0");
        assert!(v.time_id(c.max_time()).is_ok());
        assert!(v.time_id(c.max_time() + 1.0).is_err());
    }

    #[test]
    fn unknown_text_is_rejected() {
        let v = Vocab::new(&WorldConfig::easy(1));
        assert!(matches!(v.encode("xyzzy"), Err(CoeError::UnknownToken(_))));
    }
}
