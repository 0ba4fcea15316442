use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::codec::CanonicalWriter;
use crate::crypto::{self, hash, Address, Digest, KeyPair, PublicKey, Signature};

use super::chain::UtxoSet;

/// Blocks a coinbase output must wait before it can be spent.
pub const COINBASE_MATURITY: u64 = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct OutPoint {
    pub txid: Digest,
    pub vout: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TxOut {
    pub address: Address,
    pub amount: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TxKind {
    Payment,
    Coinbase,
    StakeToSelf,
}

impl TxKind {
    fn tag(self) -> u8 {
        match self {
            TxKind::Payment => 0,
            TxKind::Coinbase => 1,
            TxKind::StakeToSelf => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transaction {
    pub id: Digest,
    pub kind: TxKind,
    pub inputs: Vec<OutPoint>,
    pub outputs: Vec<TxOut>,
    pub fee: u64,
    pub issuer: Address,
    /// Issuer-chosen uniquifier; the block height for coinbases.
    pub nonce: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub issuer_key: Option<PublicKey>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub signature: Option<Signature>,
}

impl Transaction {
    /// Canonical bytes of everything except `id` and `signature`.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut w = CanonicalWriter::with_tag("tx");
        w.u8(self.kind.tag()).u32(self.inputs.len() as u32);
        for i in &self.inputs {
            w.digest(&i.txid).u32(i.vout);
        }
        w.u32(self.outputs.len() as u32);
        for o in &self.outputs {
            w.str(o.address.as_str()).u64(o.amount);
        }
        w.u64(self.fee).str(self.issuer.as_str()).u64(self.nonce);
        match &self.issuer_key {
            Some(k) => w.bool(true).bytes(&k.bytes),
            None => w.bool(false),
        };
        w.finish()
    }

    pub fn compute_id(&self) -> Digest {
        hash(&self.canonical_bytes())
    }

    /// Builds and signs a payment or stake-to-self transaction.
    pub fn signed(
        kind: TxKind,
        inputs: Vec<OutPoint>,
        outputs: Vec<TxOut>,
        fee: u64,
        nonce: u64,
        key: &KeyPair,
    ) -> Self {
        let mut tx = Transaction {
            id: Digest::ZERO,
            kind,
            inputs,
            outputs,
            fee,
            issuer: key.address.clone(),
            nonce,
            issuer_key: Some(key.public_key.clone()),
            signature: None,
        };
        tx.id = tx.compute_id();
        tx.signature = Some(crypto::sign(key, tx.id.as_bytes()));
        tx
    }

    pub fn coinbase(height: u64, outputs: Vec<TxOut>, issuer: Address) -> Self {
        let mut tx = Transaction {
            id: Digest::ZERO,
            kind: TxKind::Coinbase,
            inputs: Vec::new(),
            outputs,
            fee: 0,
            issuer,
            nonce: height,
            issuer_key: None,
            signature: None,
        };
        tx.id = tx.compute_id();
        tx
    }

    pub fn output_total(&self) -> Option<u64> {
        self.outputs
            .iter()
            .try_fold(0u64, |acc, o| acc.checked_add(o.amount))
    }

    pub fn outpoint(&self, vout: u32) -> OutPoint {
        OutPoint { txid: self.id, vout }
    }

    pub fn signature_ok(&self) -> bool {
        match (&self.issuer_key, &self.signature) {
            (Some(k), Some(s)) => {
                crypto::address_of(k) == self.issuer
                    && self.compute_id() == self.id
                    && crypto::verify(k, self.id.as_bytes(), s)
            }
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InvalidReason {
    MissingInput,
    DoubleSpend,
    ValueOverflow,
    ImmatureCoinbase,
    BadSignature,
    /// Declared fee differs from inputs minus outputs.
    FeeMismatch,
    /// Structurally impossible for its kind (no inputs, coinbase submitted as a tx, ...).
    Malformed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "status", content = "reason")]
pub enum ValidationResult {
    Valid,
    Invalid(InvalidReason),
}

impl ValidationResult {
    pub fn is_valid(self) -> bool {
        self == ValidationResult::Valid
    }
}

/// Validates against the confirmed UTXO set only.
pub fn validate_transaction(tx: &Transaction, utxos: &UtxoSet, current_height: u64) -> ValidationResult {
    validate_with_pending(tx, utxos, current_height, &BTreeSet::new())
}

/// Validates a transaction for inclusion at `current_height`.
///
/// `pending` holds outpoints already consumed by acknowledged but not yet
/// confirmed transactions; spending one counts as a double spend.
pub fn validate_with_pending(
    tx: &Transaction,
    utxos: &UtxoSet,
    current_height: u64,
    pending: &BTreeSet<OutPoint>,
) -> ValidationResult {
    use InvalidReason::*;
    let invalid = ValidationResult::Invalid;
    if tx.kind == TxKind::Coinbase || tx.inputs.is_empty() || tx.outputs.is_empty() {
        return invalid(Malformed);
    }
    if !tx.signature_ok() {
        return invalid(BadSignature);
    }
    let mut seen = BTreeSet::new();
    let mut in_total: u64 = 0;
    for input in &tx.inputs {
        if !seen.insert(*input) || pending.contains(input) || utxos.is_spent(input) {
            return invalid(DoubleSpend);
        }
        let Some(entry) = utxos.get(input) else {
            return invalid(MissingInput);
        };
        if entry.address != tx.issuer {
            return invalid(BadSignature);
        }
        if entry.coinbase && current_height < entry.created_height + COINBASE_MATURITY {
            return invalid(ImmatureCoinbase);
        }
        in_total = match in_total.checked_add(entry.amount) {
            Some(v) => v,
            None => return invalid(ValueOverflow),
        };
    }
    let Some(out_total) = tx.output_total() else {
        return invalid(ValueOverflow);
    };
    if out_total > in_total {
        return invalid(ValueOverflow);
    }
    if in_total - out_total != tx.fee {
        return invalid(FeeMismatch);
    }
    if tx.kind == TxKind::StakeToSelf && (tx.fee != 0 || tx.outputs.iter().any(|o| o.address != tx.issuer)) {
        return invalid(Malformed);
    }
    ValidationResult::Valid
}
