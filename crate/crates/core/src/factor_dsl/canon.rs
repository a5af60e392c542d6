use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest as _, Sha256};

use super::ast::FactorExpr;
use super::ops;

/// Deterministic normal form: commutative arguments sorted, `neg(neg(x))`
/// collapsed, `-0.0` folded to `0.0`. No other rewriting.
pub fn canonicalize(expr: &FactorExpr) -> FactorExpr {
    match expr {
        FactorExpr::NumLiteral(v) if *v == 0.0 => FactorExpr::NumLiteral(0.0),
        FactorExpr::Call(op, args) => {
            let mut args: Vec<FactorExpr> = args.iter().map(canonicalize).collect();
            if op == "neg" && args.len() == 1 {
                if let FactorExpr::Call(inner, inner_args) = &args[0] {
                    if inner == "neg" && inner_args.len() == 1 {
                        return inner_args[0].clone();
                    }
                }
            }
            if ops::lookup(op).is_some_and(|s| s.commutative) {
                // Template first so literal edits never reorder a family.
                args.sort_by_cached_key(|a| (a.template(), a.to_string()));
            }
            FactorExpr::Call(op.clone(), args)
        }
        other => other.clone(),
    }
}

/// 256-bit SHA-256 digest, serialized as lowercase hex.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Digest(pub [u8; 32]);

impl Digest {
    pub fn of(bytes: &[u8]) -> Self {
        Self(Sha256::digest(bytes).into())
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self, hex::FromHexError> {
        let mut out = [0u8; 32];
        hex::decode_to_slice(s, &mut out)?;
        Ok(Self(out))
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", &self.to_hex()[..12])
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Serialize for Digest {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Digest {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Self::from_hex(&s).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Signature {
    /// Digest of the canonical text.
    pub exact_hash: Digest,
    /// Digest of the canonical text with numeric literals masked as `#`.
    pub family_hash: Digest,
}

pub fn signature(expr: &FactorExpr) -> Signature {
    let canonical = canonicalize(expr);
    Signature {
        exact_hash: Digest::of(canonical.to_string().as_bytes()),
        family_hash: Digest::of(canonical.template().as_bytes()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factor_dsl::parse;

    fn canon(text: &str) -> String {
        canonicalize(&parse(text).unwrap()).to_string()
    }

    fn sig(text: &str) -> Signature {
        signature(&parse(text).unwrap())
    }

    #[test]
    fn normal_form_examples() {
        assert_eq!(canon("add(volume, close)"), "add(close, volume)");
        assert_eq!(canon("neg(neg(close))"), "close");
        assert_eq!(canon("neg(neg(neg(close)))"), "neg(close)");
        assert_eq!(canon("sub(volume, close)"), "sub(volume, close)");
        assert_eq!(canon("mul(-0.0, close)"), canon("mul(close, 0.0)"));
    }

    #[test]
    fn signature_examples() {
        assert_eq!(sig("rank(ts_mean(return,5))"), sig("rank( ts_mean( return , 5 ) )"));
        let (a, b) = (sig("ts_mean(close, 5)"), sig("ts_mean(close, 10)"));
        assert_ne!(a.exact_hash, b.exact_hash);
        assert_eq!(a.family_hash, b.family_hash);
        assert_eq!(sig("add(close,volume)").exact_hash, sig("add(volume,close)").exact_hash);
    }

    #[test]
    fn digest_hex_round_trip() {
        let d = Digest::of(b"close");
        assert_eq!(Digest::from_hex(&d.to_hex()).unwrap(), d);
        let json = serde_json::to_string(&d).unwrap();
        assert_eq!(serde_json::from_str::<Digest>(&json).unwrap(), d);
    }
}
