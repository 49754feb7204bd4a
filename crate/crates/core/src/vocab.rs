//! Word-level vocabulary with label proxies and the leak-phrase list.
//!
//! File format: a header block of `#!` declarations terminated by `#---`,
//! followed by one surface per line. The zero-based line index after the
//! terminator is the token id.
//!
//! ```text
//! # mdlm-lab vocabulary v1
//! #! mask <mask>
//! #! pad <pad>
//! #! unk <unk>
//! #! supported True
//! #! refuted False
//! #---
//! <pad>
//! <mask>
//! ...
//! ```

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::corpus::lexicon;
use crate::error::{Error, Result};

pub type TokenId = u32;

pub const MASK_SURFACE: &str = "<mask>";
pub const PAD_SURFACE: &str = "<pad>";
pub const UNK_SURFACE: &str = "<unk>";
pub const SUPPORTED_PROXY: &str = "True";
pub const REFUTED_PROXY: &str = "False";

const FILE_MAGIC: &str = "# mdlm-lab vocabulary v1";
const HEADER_END: &str = "#---";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    surface_to_id: HashMap<String, TokenId>,
    id_to_surface: Vec<String>,
    pub mask_id: TokenId,
    pub pad_id: TokenId,
    pub unk_id: TokenId,
    pub label_proxy_supported: TokenId,
    pub label_proxy_refuted: TokenId,
    leak_phrases: Vec<Vec<String>>,
}

impl Vocabulary {
    /// Builds a vocabulary from an ordered surface list and the special-token surfaces.
    pub fn from_surfaces(
        surfaces: Vec<String>,
        mask: &str,
        pad: &str,
        unk: &str,
        supported: &str,
        refuted: &str,
    ) -> Result<Self> {
        let mut surface_to_id = HashMap::with_capacity(surfaces.len());
        for (id, s) in surfaces.iter().enumerate() {
            if s.is_empty() || s.chars().any(char::is_whitespace) {
                return Err(Error::Vocab(format!(
                    "surface {id} is empty or contains whitespace"
                )));
            }
            if surface_to_id.insert(s.clone(), id as TokenId).is_some() {
                return Err(Error::Vocab(format!("duplicate surface `{s}`")));
            }
        }
        let lookup = |name: &str, s: &str| {
            surface_to_id.get(s).copied().ok_or_else(|| {
                Error::Vocab(format!("special `{name}` surface `{s}` not in vocabulary"))
            })
        };
        let mask_id = lookup("mask", mask)?;
        let pad_id = lookup("pad", pad)?;
        let unk_id = lookup("unk", unk)?;
        let label_proxy_supported = lookup("supported", supported)?;
        let label_proxy_refuted = lookup("refuted", refuted)?;
        let specials = [
            mask_id,
            pad_id,
            unk_id,
            label_proxy_supported,
            label_proxy_refuted,
        ];
        for (i, a) in specials.iter().enumerate() {
            if specials[i + 1..].contains(a) {
                return Err(Error::Vocab("special tokens must be distinct".into()));
            }
        }
        let leak_phrases = lexicon::LEAK_PHRASES
            .iter()
            .map(|p| p.split(' ').map(str::to_owned).collect())
            .collect();
        Ok(Self {
            surface_to_id,
            id_to_surface: surfaces,
            mask_id,
            pad_id,
            unk_id,
            label_proxy_supported,
            label_proxy_refuted,
            leak_phrases,
        })
    }

    /// The closed vocabulary of the synthetic fact-verification language.
    pub fn standard() -> Self {
        let mut surfaces: Vec<String> =
            vec![PAD_SURFACE.into(), MASK_SURFACE.into(), UNK_SURFACE.into()];
        let mut push = |s: &str| {
            if !surfaces.iter().any(|x| x == s) {
                surfaces.push(s.to_owned());
            }
        };
        push(SUPPORTED_PROXY);
        push(REFUTED_PROXY);
        lexicon::STRUCTURE_WORDS.iter().for_each(|s| push(s));
        lexicon::PROMPT_WORDS.iter().for_each(|s| push(s));
        lexicon::JUSTIFICATION_WORDS.iter().for_each(|s| push(s));
        lexicon::LEAK_WORDS.iter().for_each(|s| push(s));
        lexicon::ENTITIES.iter().for_each(|s| push(s));
        lexicon::COUNT_ATTRIBUTES.iter().for_each(|s| push(s));
        lexicon::YEAR_ATTRIBUTES.iter().for_each(|s| push(s));
        push(lexicon::RELATION);
        lexicon::count_values().for_each(|s| push(&s));
        lexicon::year_values().for_each(|s| push(&s));
        Self::from_surfaces(
            surfaces,
            MASK_SURFACE,
            PAD_SURFACE,
            UNK_SURFACE,
            SUPPORTED_PROXY,
            REFUTED_PROXY,
        )
        .expect("standard vocabulary is well formed")
    }

    pub fn len(&self) -> usize {
        self.id_to_surface.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_surface.is_empty()
    }

    pub fn id(&self, surface: &str) -> Option<TokenId> {
        self.surface_to_id.get(surface).copied()
    }

    pub fn surface(&self, id: TokenId) -> Option<&str> {
        self.id_to_surface.get(id as usize).map(String::as_str)
    }

    /// Surface for display; out-of-range ids render as the unknown surface.
    pub fn surface_or_unk(&self, id: TokenId) -> &str {
        self.surface(id).unwrap_or(UNK_SURFACE)
    }

    pub fn surfaces(&self) -> &[String] {
        &self.id_to_surface
    }

    pub fn leak_phrases(&self) -> &[Vec<String>] {
        &self.leak_phrases
    }

    /// Whitespace tokenization; out-of-vocabulary words map to `<unk>`.
    pub fn tokenize(&self, text: &str) -> Vec<TokenId> {
        text.split_whitespace()
            .map(|w| self.id(w).unwrap_or(self.unk_id))
            .collect()
    }

    pub fn detokenize(&self, ids: &[TokenId]) -> String {
        ids.iter()
            .map(|&id| self.surface_or_unk(id))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn is_proxy(&self, id: TokenId) -> bool {
        id == self.label_proxy_supported || id == self.label_proxy_refuted
    }

    pub fn to_file_string(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{FILE_MAGIC}");
        for (name, id) in [
            ("mask", self.mask_id),
            ("pad", self.pad_id),
            ("unk", self.unk_id),
            ("supported", self.label_proxy_supported),
            ("refuted", self.label_proxy_refuted),
        ] {
            let _ = writeln!(out, "#! {name} {}", self.surface_or_unk(id));
        }
        let _ = writeln!(out, "{HEADER_END}");
        for s in &self.id_to_surface {
            let _ = writeln!(out, "{s}");
        }
        out
    }

    pub fn parse_file(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, l)) if l == FILE_MAGIC => {}
            _ => {
                return Err(Error::VocabFile {
                    line: 1,
                    msg: format!("expected `{FILE_MAGIC}`"),
                })
            }
        }
        let mut specials: HashMap<String, String> = HashMap::new();
        let mut terminated = false;
        for (idx, line) in lines.by_ref() {
            if line == HEADER_END {
                terminated = true;
                break;
            }
            let rest = line.strip_prefix("#! ").ok_or_else(|| Error::VocabFile {
                line: idx + 1,
                msg: "expected `#! <name> <surface>`".into(),
            })?;
            let (name, surface) = rest.split_once(' ').ok_or_else(|| Error::VocabFile {
                line: idx + 1,
                msg: "missing surface".into(),
            })?;
            if !matches!(name, "mask" | "pad" | "unk" | "supported" | "refuted") {
                return Err(Error::VocabFile {
                    line: idx + 1,
                    msg: format!("unknown special `{name}`"),
                });
            }
            if specials
                .insert(name.to_owned(), surface.to_owned())
                .is_some()
            {
                return Err(Error::VocabFile {
                    line: idx + 1,
                    msg: format!("duplicate special `{name}`"),
                });
            }
        }
        if !terminated {
            return Err(Error::VocabFile {
                line: text.lines().count(),
                msg: format!("missing `{HEADER_END}`"),
            });
        }
        let mut surfaces = Vec::new();
        for (idx, line) in lines {
            if line.is_empty() || line.chars().any(char::is_whitespace) {
                return Err(Error::VocabFile {
                    line: idx + 1,
                    msg: "surface is empty or contains whitespace".into(),
                });
            }
            surfaces.push(line.to_owned());
        }
        let get = |name: &str| {
            specials
                .get(name)
                .cloned()
                .ok_or_else(|| Error::Vocab(format!("header does not declare `{name}`")))
        };
        Self::from_surfaces(
            surfaces,
            &get("mask")?,
            &get("pad")?,
            &get("unk")?,
            &get("supported")?,
            &get("refuted")?,
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse_file(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_file_string())?;
        Ok(())
    }

    /// Hex SHA-256 of the serialized vocabulary file.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_file_string().as_bytes()))
    }
}
