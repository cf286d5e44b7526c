use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::PolicyError;

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const SEP: usize = 3;

const CONTROL: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<sep>"];

const GRAMMAR: &[&str] = &[
    // digits
    "0", "1", "2", "3", "4", "5", "6", "7", "8", "9",
    // arithmetic
    "+", "-", "*", "/", "%", "(", ")", "=", ",", ";", "sum", "difference", "product",
    // identifiers and logic constants
    "a", "b", "c", "d", "e", "f",
    // logic
    "facts", "rules", "ask", "->", "fact", "rule", "query", ":-", ".", "?", "p", "q", "r", "s", "t", "u",
    "X", "Y", "Z",
    // grid
    "grid", "start", "goal", "wall", "U", "D", "L", "R",
];

/// Token/id bijection shared by every environment.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    /// Control tokens followed by the grammar tokens of all environments.
    pub fn standard() -> Self {
        let tokens = CONTROL.iter().chain(GRAMMAR).map(|t| t.to_string()).collect();
        Self::from_tokens(tokens).expect("standard vocabulary is a bijection")
    }

    /// The first four tokens must be the control tokens in id order.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self, PolicyError> {
        if tokens.len() < CONTROL.len() || tokens[..CONTROL.len()] != CONTROL {
            return Err(PolicyError::Vocab("vocabulary must start with <pad> <bos> <eos> <sep>".into()));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (id, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), id).is_some() {
                return Err(PolicyError::Vocab(format!("duplicate token `{t}`")));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn is_control(id: usize) -> bool {
        id < CONTROL.len()
    }

    /// Encodes grammar tokens; control tokens are not accepted as input text.
    pub fn encode(&self, tokens: &[String]) -> Result<Vec<usize>, PolicyError> {
        tokens
            .iter()
            .map(|t| match self.id(t) {
                Some(id) if !Self::is_control(id) => Ok(id),
                _ => Err(PolicyError::UnknownToken(t.clone())),
            })
            .collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .map(|&id| self.token(id).unwrap_or("<unk>").to_string())
            .collect()
    }
}

impl TryFrom<Vec<String>> for Vocab {
    type Error = PolicyError;

    fn try_from(tokens: Vec<String>) -> Result<Self, Self::Error> {
        Self::from_tokens(tokens)
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}
