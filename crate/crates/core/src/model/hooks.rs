// SPDX-License-Identifier: MIT OR Apache-2.0

//! Addressing of cacheable and editable sites in the forward pass.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::cache::ActivationCache;
use super::config::ModelConfig;
use crate::error::{Error, Result};

/// Kind of activation recorded at a hook point.
///
/// Per-head sites (`HeadQ`, `HeadK`, `HeadV`, `HeadPattern`, `HeadZ`) are
/// exposed after the input projection and before heads are concatenated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Site {
    Embed,
    ResidPre,
    HeadQ,
    HeadK,
    HeadV,
    HeadPattern,
    HeadZ,
    AttnOut,
    ResidMid,
    MlpOut,
    ResidPost,
    Logits,
}

impl Site {
    pub const ALL: [Site; 12] = [
        Site::Embed,
        Site::ResidPre,
        Site::HeadQ,
        Site::HeadK,
        Site::HeadV,
        Site::HeadPattern,
        Site::HeadZ,
        Site::AttnOut,
        Site::ResidMid,
        Site::MlpOut,
        Site::ResidPost,
        Site::Logits,
    ];

    pub fn is_per_head(self) -> bool {
        matches!(self, Site::HeadQ | Site::HeadK | Site::HeadV | Site::HeadPattern | Site::HeadZ)
    }

    /// Rank within one layer's computation, used to order components.
    fn stage(self) -> usize {
        match self {
            Site::Embed => 0,
            Site::ResidPre => 1,
            Site::HeadQ | Site::HeadK | Site::HeadV => 2,
            Site::HeadPattern => 3,
            Site::HeadZ => 4,
            Site::AttnOut => 5,
            Site::ResidMid => 6,
            Site::MlpOut => 7,
            Site::ResidPost => 8,
            Site::Logits => 9,
        }
    }

    pub fn short_name(self) -> &'static str {
        match self {
            Site::Embed => "embed",
            Site::ResidPre => "resid-pre",
            Site::HeadQ => "q",
            Site::HeadK => "k",
            Site::HeadV => "v",
            Site::HeadPattern => "pattern",
            Site::HeadZ => "z",
            Site::AttnOut => "attn-out",
            Site::ResidMid => "resid-mid",
            Site::MlpOut => "mlp-out",
            Site::ResidPost => "resid-post",
            Site::Logits => "logits",
        }
    }
}

impl FromStr for Site {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Site::ALL
            .into_iter()
            .find(|site| site.short_name() == s)
            .ok_or_else(|| Error::InvalidComponent(format!("unknown site `{s}`")))
    }
}

/// An attention head in `layer.head` notation, e.g. `15.14`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct HeadRef {
    pub layer: usize,
    pub head: usize,
}

impl HeadRef {
    pub const fn new(layer: usize, head: usize) -> Self {
        Self { layer, head }
    }

    pub fn validate(&self, cfg: &ModelConfig) -> Result<()> {
        if self.layer >= cfg.n_layers || self.head >= cfg.n_heads {
            return Err(Error::InvalidComponent(format!("head {self} outside {}x{} grid", cfg.n_layers, cfg.n_heads)));
        }
        Ok(())
    }

    pub fn site(&self, site: Site) -> ComponentRef {
        ComponentRef::head(site, self.layer, self.head)
    }

    pub fn all(cfg: &ModelConfig) -> impl Iterator<Item = HeadRef> {
        let n_heads = cfg.n_heads;
        (0..cfg.n_layers).flat_map(move |l| (0..n_heads).map(move |h| HeadRef::new(l, h)))
    }
}

impl fmt::Display for HeadRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.layer, self.head)
    }
}

impl FromStr for HeadRef {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidComponent(format!("expected `layer.head`, got `{s}`"));
        let (l, h) = s.trim().split_once('.').ok_or_else(bad)?;
        Ok(HeadRef::new(l.parse().map_err(|_| bad())?, h.parse().map_err(|_| bad())?))
    }
}

/// Cache key: a site without a token position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SiteKey {
    pub layer: usize,
    pub site: Site,
    pub head: Option<usize>,
}

impl SiteKey {
    pub fn new(site: Site, layer: usize, head: Option<usize>) -> Self {
        Self { layer, site, head }
    }

    pub fn head(site: Site, layer: usize, head: usize) -> Self {
        Self::new(site, layer, Some(head))
    }

    /// Position in computation order; a key can only influence keys with a
    /// strictly larger order.
    pub fn order(&self, cfg: &ModelConfig) -> usize {
        match self.site {
            Site::Embed => 0,
            Site::Logits => 1 + cfg.n_layers * 10,
            s => 1 + self.layer * 10 + s.stage(),
        }
    }

    pub fn at(self, position: usize) -> ComponentRef {
        ComponentRef { layer: self.layer, site: self.site, head: self.head, position: Some(position) }
    }

    pub fn all(self) -> ComponentRef {
        ComponentRef { layer: self.layer, site: self.site, head: self.head, position: None }
    }
}

/// One model site, optionally narrowed to a single token position.
///
/// `embed` lives at layer 0 and `logits` at the last layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ComponentRef {
    pub layer: usize,
    pub site: Site,
    pub head: Option<usize>,
    pub position: Option<usize>,
}

impl ComponentRef {
    pub fn new(site: Site, layer: usize, head: Option<usize>, position: Option<usize>) -> Self {
        Self { layer, site, head, position }
    }

    pub fn head(site: Site, layer: usize, head: usize) -> Self {
        Self::new(site, layer, Some(head), None)
    }

    pub fn layer_site(site: Site, layer: usize) -> Self {
        Self::new(site, layer, None, None)
    }

    pub fn embed() -> Self {
        Self::new(Site::Embed, 0, None, None)
    }

    pub fn logits(cfg: &ModelConfig) -> Self {
        Self::new(Site::Logits, cfg.n_layers - 1, None, None)
    }

    pub fn at(mut self, position: usize) -> Self {
        self.position = Some(position);
        self
    }

    pub fn key(&self) -> SiteKey {
        SiteKey::new(self.site, self.layer, self.head)
    }

    pub fn head_ref(&self) -> Option<HeadRef> {
        self.head.map(|h| HeadRef::new(self.layer, h))
    }

    pub fn validate(&self, cfg: &ModelConfig) -> Result<()> {
        if self.layer >= cfg.n_layers {
            return Err(Error::InvalidComponent(format!("{self}: layer {} >= n_layers {}", self.layer, cfg.n_layers)));
        }
        match (self.site.is_per_head(), self.head) {
            (true, None) => Err(Error::InvalidComponent(format!("{self}: per-head site needs a head"))),
            (false, Some(_)) => Err(Error::InvalidComponent(format!("{self}: site has no heads"))),
            (true, Some(h)) if h >= cfg.n_heads => {
                Err(Error::InvalidComponent(format!("{self}: head {h} >= n_heads {}", cfg.n_heads)))
            }
            _ if self.site == Site::Embed && self.layer != 0 => {
                Err(Error::InvalidComponent(format!("{self}: embed lives at layer 0")))
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for ComponentRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.head {
            Some(h) => write!(f, "{}[{}.{}]", self.site.short_name(), self.layer, h)?,
            None => write!(f, "{}[{}]", self.site.short_name(), self.layer)?,
        }
        if let Some(p) = self.position {
            write!(f, "@{p}")?;
        }
        Ok(())
    }
}

/// What to do with the activation at an edit target.
#[derive(Debug, Clone)]
pub enum EditAction {
    /// Overwrite with a tensor of the target's shape (`1 x dim` when the
    /// target names a position, `tokens x dim` otherwise).
    ReplaceWith(Array2<f32>),
    /// Overwrite with the value recorded for the same site in another pass.
    FreezeFrom(Arc<ActivationCache>),
    /// Overwrite one attention row with explicit `(key position, weight)`
    /// pairs; every other key gets 0.
    ForcePattern(Vec<(usize, f32)>),
    /// Zero the listed key positions in one attention row, then renormalize.
    BlockPattern(Vec<usize>),
    Zero,
}

#[derive(Debug, Clone)]
pub struct EditRule {
    pub target: ComponentRef,
    pub action: EditAction,
}

impl EditRule {
    pub fn new(target: ComponentRef, action: EditAction) -> Self {
        Self { target, action }
    }

    pub fn replace(target: ComponentRef, value: Array2<f32>) -> Self {
        Self::new(target, EditAction::ReplaceWith(value))
    }

    pub fn freeze(target: ComponentRef, cache: Arc<ActivationCache>) -> Self {
        Self::new(target, EditAction::FreezeFrom(cache))
    }

    pub fn force(head: HeadRef, query: usize, weights: Vec<(usize, f32)>) -> Self {
        Self::new(head.site(Site::HeadPattern).at(query), EditAction::ForcePattern(weights))
    }

    pub fn block(head: HeadRef, query: usize, keys: Vec<usize>) -> Self {
        Self::new(head.site(Site::HeadPattern).at(query), EditAction::BlockPattern(keys))
    }

    pub fn zero(target: ComponentRef) -> Self {
        Self::new(target, EditAction::Zero)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn head_notation_round_trips() {
        let h: HeadRef = "15.14".parse().unwrap();
        assert_eq!(h, HeadRef::new(15, 14));
        assert_eq!(h.to_string(), "15.14");
        assert!("15".parse::<HeadRef>().is_err());
        assert!("a.b".parse::<HeadRef>().is_err());
    }

    #[test]
    fn component_validation() {
        let cfg = ModelConfig::gpt2_medium();
        assert!(ComponentRef::head(Site::HeadZ, 23, 15).validate(&cfg).is_ok());
        assert!(ComponentRef::head(Site::HeadZ, 24, 0).validate(&cfg).is_err());
        assert!(ComponentRef::head(Site::HeadZ, 0, 16).validate(&cfg).is_err());
        assert!(ComponentRef::layer_site(Site::HeadZ, 0).validate(&cfg).is_err());
        assert!(ComponentRef::new(Site::MlpOut, 3, Some(1), None).validate(&cfg).is_err());
        assert!(ComponentRef::embed().validate(&cfg).is_ok());
        assert!(ComponentRef::logits(&cfg).validate(&cfg).is_ok());
    }

    #[test]
    fn computation_order() {
        let cfg = ModelConfig::gpt2_medium();
        let z = SiteKey::head(Site::HeadZ, 3, 0).order(&cfg);
        let q_same = SiteKey::head(Site::HeadQ, 3, 1).order(&cfg);
        let q_next = SiteKey::head(Site::HeadQ, 4, 1).order(&cfg);
        assert!(q_same < z && z < q_next);
        assert!(SiteKey::new(Site::Embed, 0, None).order(&cfg) < q_same);
        assert!(SiteKey::new(Site::Logits, 23, None).order(&cfg) > q_next);
        for s in Site::ALL {
            assert_eq!(s.short_name().parse::<Site>().unwrap(), s);
        }
    }
}
