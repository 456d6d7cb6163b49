// SPDX-License-Identifier: MIT OR Apache-2.0

use std::collections::{HashMap, HashSet};

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};

use super::hooks::{ComponentRef, Site, SiteKey};

/// Activations recorded during one forward pass, keyed by site.
///
/// Every tensor is `positions x dim`; attention patterns are
/// `query x key`. A cache is never mutated after the pass that built it.
#[derive(Debug, Clone, Default)]
pub struct ActivationCache {
    entries: HashMap<SiteKey, Array2<f32>>,
    token_count: usize,
}

impl ActivationCache {
    pub(crate) fn new(token_count: usize) -> Self {
        Self { entries: HashMap::new(), token_count }
    }

    pub(crate) fn insert(&mut self, key: SiteKey, value: Array2<f32>) {
        self.entries.insert(key, value);
    }

    pub fn token_count(&self) -> usize {
        self.token_count
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, key: &SiteKey) -> bool {
        self.entries.contains_key(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &SiteKey> {
        self.entries.keys()
    }

    pub fn site(&self, key: &SiteKey) -> Option<&Array2<f32>> {
        self.entries.get(key)
    }

    /// The tensor for `component`, narrowed to one row when it names a position.
    pub fn get(&self, component: &ComponentRef) -> Option<ArrayView2<'_, f32>> {
        let full = self.entries.get(&component.key())?;
        match component.position {
            None => Some(full.view()),
            Some(p) if p < full.nrows() => Some(full.slice(ndarray::s![p..p + 1, ..])),
            Some(_) => None,
        }
    }

    pub fn row(&self, key: &SiteKey, position: usize) -> Option<ArrayView1<'_, f32>> {
        let full = self.entries.get(key)?;
        (position < full.nrows()).then(|| full.index_axis(Axis(0), position))
    }

    pub fn pattern(&self, layer: usize, head: usize) -> Option<&Array2<f32>> {
        self.site(&SiteKey::head(Site::HeadPattern, layer, head))
    }

    pub fn z(&self, layer: usize, head: usize) -> Option<&Array2<f32>> {
        self.site(&SiteKey::head(Site::HeadZ, layer, head))
    }

    pub fn layer_site(&self, site: Site, layer: usize) -> Option<&Array2<f32>> {
        self.site(&SiteKey::new(site, layer, None))
    }
}

/// Which sites a pass records.
#[derive(Debug, Clone, Default)]
pub struct CaptureFilter {
    everything: bool,
    kinds: HashSet<Site>,
    keys: HashSet<SiteKey>,
}

impl CaptureFilter {
    pub fn all() -> Self {
        Self { everything: true, ..Self::default() }
    }

    pub fn nothing() -> Self {
        Self::default()
    }

    pub fn kinds(sites: impl IntoIterator<Item = Site>) -> Self {
        Self::nothing().with_kinds(sites)
    }

    pub fn keys(keys: impl IntoIterator<Item = SiteKey>) -> Self {
        Self::nothing().with_keys(keys)
    }

    pub fn with_kinds(mut self, sites: impl IntoIterator<Item = Site>) -> Self {
        self.kinds.extend(sites);
        self
    }

    pub fn with_keys(mut self, keys: impl IntoIterator<Item = SiteKey>) -> Self {
        self.keys.extend(keys);
        self
    }

    pub fn wants(&self, key: &SiteKey) -> bool {
        self.everything || self.kinds.contains(&key.site) || self.keys.contains(key)
    }

    pub fn is_empty(&self) -> bool {
        !self.everything && self.kinds.is_empty() && self.keys.is_empty()
    }
}
