//! Token sequences and their space-joined text form.

pub type TokenSeq = Vec<String>;

pub fn split(text: &str) -> TokenSeq {
    text.split_whitespace().map(String::from).collect()
}

pub fn join(tokens: &[String]) -> String {
    tokens.join(" ")
}

/// Serde adapter storing a token sequence as one space-joined string.
pub mod space_joined {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(tokens: &[String], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&super::join(tokens))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<String>, D::Error> {
        let text = String::deserialize(d)?;
        Ok(super::split(&text))
    }
}
