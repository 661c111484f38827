//! Turns consensus artifacts into per-entity contributions.
//!
//! A block is worth one unit of contribution. Multi-recipient coinbase payouts
//! split that unit proportionally, single-producer chains hand it to the
//! producer, and builder-paid blocks are traced to the proposer that received
//! the builder's payment.

use std::collections::HashSet;
use std::io::{self, BufRead};
use std::path::Path;

use log::warn;
use thiserror::Error;

use crate::model::{EntityId, ModelError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AttributionError {
    #[error("block {block_id}: total reward is zero")]
    ZeroReward { block_id: String },
    #[error("block {block_id}: expected exactly one producer, found {found}")]
    MissingProducer { block_id: String, found: usize },
    #[error("block {block_id}: invalid amount {amount}")]
    InvalidAmount { block_id: String, amount: f64 },
    #[error("block {block_id}: no recipients")]
    NoRecipients { block_id: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Output address of a reward, or a bare public key with no address form.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum RecipientAddress {
    Address(String),
    RawPubkey(String),
}

impl RecipientAddress {
    /// Raw pubkeys resolve to the reserved `Unknown` entity.
    pub fn entity(&self) -> Result<EntityId, ModelError> {
        match self {
            RecipientAddress::Address(a) => EntityId::new(a),
            RecipientAddress::RawPubkey(_) => Ok(EntityId::unknown()),
        }
    }

    /// Hex-encoded secp256k1 keys: 33-byte compressed or 65-byte uncompressed.
    pub fn looks_like_pubkey(s: &str) -> bool {
        let s = s.trim();
        let hex = s.bytes().all(|b| b.is_ascii_hexdigit());
        hex && ((s.len() == 66 && (s.starts_with("02") || s.starts_with("03")))
            || (s.len() == 130 && s.starts_with("04")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Recipient {
    pub address: RecipientAddress,
    pub amount: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RewardPayout {
    pub block_id: String,
    pub recipients: Vec<Recipient>,
}

impl RewardPayout {
    pub fn new(block_id: impl Into<String>) -> Self {
        RewardPayout {
            block_id: block_id.into(),
            recipients: Vec::new(),
        }
    }

    pub fn pay(mut self, address: impl Into<String>, amount: f64) -> Self {
        self.recipients.push(Recipient {
            address: RecipientAddress::Address(address.into()),
            amount,
        });
        self
    }

    pub fn pay_pubkey(mut self, key: impl Into<String>, amount: f64) -> Self {
        self.recipients.push(Recipient {
            address: RecipientAddress::RawPubkey(key.into()),
            amount,
        });
        self
    }
}

/// Splits one block across its reward recipients by amount. Duplicate
/// entities (including several pubkeys collapsing into `Unknown`) are merged
/// in order of first appearance.
pub fn attribute_proportional(p: &RewardPayout) -> Result<Vec<(EntityId, f64)>, AttributionError> {
    if p.recipients.is_empty() {
        return Err(AttributionError::NoRecipients {
            block_id: p.block_id.clone(),
        });
    }
    for r in &p.recipients {
        if !r.amount.is_finite() || r.amount < 0.0 {
            return Err(AttributionError::InvalidAmount {
                block_id: p.block_id.clone(),
                amount: r.amount,
            });
        }
    }
    let total = crate::sum::exact_sum(p.recipients.iter().map(|r| r.amount));
    if total <= 0.0 {
        return Err(AttributionError::ZeroReward {
            block_id: p.block_id.clone(),
        });
    }
    let mut out: Vec<(EntityId, f64)> = Vec::with_capacity(p.recipients.len());
    for r in &p.recipients {
        let entity = r.address.entity()?;
        let share = r.amount / total;
        match out.iter_mut().find(|(e, _)| *e == entity) {
            Some(slot) => slot.1 += share,
            None => out.push((entity, share)),
        }
    }
    Ok(out)
}

/// Like [`attribute_proportional`], but a zero-reward block goes wholly to
/// `Unknown`. The second value reports whether that fallback fired.
pub fn attribute_proportional_or_unknown(p: &RewardPayout) -> Result<(Vec<(EntityId, f64)>, bool), AttributionError> {
    match attribute_proportional(p) {
        Ok(shares) => Ok((shares, false)),
        Err(AttributionError::ZeroReward { block_id }) => {
            warn!(
                "block {block_id} has zero total reward; attributing to {}",
                EntityId::UNKNOWN
            );
            Ok((vec![(EntityId::unknown(), 1.0)], true))
        }
        Err(e) => Err(e),
    }
}

/// Attributes the whole block to its single producer.
pub fn attribute_single(p: &RewardPayout) -> Result<(EntityId, f64), AttributionError> {
    match p.recipients.as_slice() {
        [only] => Ok((only.address.entity()?, 1.0)),
        other => Err(AttributionError::MissingProducer {
            block_id: p.block_id.clone(),
            found: other.len(),
        }),
    }
}

/// Addresses known to belong to block builders.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BuilderLabels {
    addresses: HashSet<String>,
}

impl BuilderLabels {
    /// One address per line; `#` starts a comment; blank lines ignored.
    pub fn parse<R: BufRead>(reader: R) -> io::Result<Self> {
        let mut addresses = HashSet::new();
        for line in reader.lines() {
            let line = line?;
            let body = line.split('#').next().unwrap_or("").trim();
            if !body.is_empty() {
                addresses.insert(body.to_string());
            }
        }
        Ok(BuilderLabels { addresses })
    }

    pub fn from_path(path: &Path) -> io::Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::parse(io::BufReader::new(file))
    }

    pub fn contains(&self, address: &str) -> bool {
        self.addresses.contains(address)
    }

    pub fn len(&self) -> usize {
        self.addresses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.addresses.is_empty()
    }
}

impl<S: Into<String>> FromIterator<S> for BuilderLabels {
    fn from_iter<I: IntoIterator<Item = S>>(iter: I) -> Self {
        BuilderLabels {
            addresses: iter.into_iter().map(Into::into).collect(),
        }
    }
}

/// Fee recipient of a block plus any payments that address made in the block.
#[derive(Debug, Clone, PartialEq)]
pub struct BuilderTransfer {
    pub block_id: String,
    pub fee_recipient: String,
    pub transfers: Vec<(String, f64)>,
}

impl BuilderTransfer {
    pub fn new(block_id: impl Into<String>, fee_recipient: impl Into<String>) -> Self {
        BuilderTransfer {
            block_id: block_id.into(),
            fee_recipient: fee_recipient.into(),
            transfers: Vec::new(),
        }
    }

    pub fn with_transfer(mut self, to: impl Into<String>, amount: f64) -> Self {
        self.transfers.push((to.into(), amount));
        self
    }

    /// Largest transfer, ties broken by ascending recipient.
    pub fn transfer_to(&self) -> Option<&str> {
        self.transfers
            .iter()
            .filter(|(to, _)| !to.trim().is_empty())
            .max_by(|a, b| a.1.total_cmp(&b.1).then_with(|| b.0.cmp(&a.0)))
            .map(|(to, _)| to.as_str())
    }
}

pub fn resolve_pbs_proposer(t: &BuilderTransfer, labels: &BuilderLabels) -> Result<EntityId, ModelError> {
    if labels.contains(t.fee_recipient.trim()) {
        if let Some(to) = t.transfer_to() {
            return EntityId::new(to);
        }
    }
    EntityId::new(&t.fee_recipient)
}
