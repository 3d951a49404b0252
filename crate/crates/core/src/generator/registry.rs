// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeMap;
use std::sync::Arc;

use super::{Decoder, GeneratorBackend, GeneratorError, GreedyDecoder, HttpBackend, NGramModel, PerturbedDecoder, DEFAULT_ORDER};

type BackendFactory = fn(Option<&str>) -> Result<Arc<dyn GeneratorBackend>, GeneratorError>;

/// Generator backends by scheme. A spec string is `name` or `name:arg`,
/// e.g. `ngram`, `ngram:5`, `http:http://127.0.0.1:8080`.
pub struct BackendRegistry {
    factories: BTreeMap<&'static str, BackendFactory>,
}

impl Default for BackendRegistry {
    fn default() -> Self {
        let mut r = BackendRegistry { factories: BTreeMap::new() };
        r.register("ngram", |arg| {
            let order = match arg {
                Some(a) => a
                    .parse()
                    .map_err(|_| GeneratorError::InvalidConfig(format!("bad n-gram order {a:?}")))?,
                None => DEFAULT_ORDER,
            };
            Ok(Arc::new(NGramModel::new(order)?))
        });
        r.register("http", |arg| {
            let url = arg.ok_or_else(|| GeneratorError::InvalidConfig("http backend needs a URL".into()))?;
            Ok(Arc::new(HttpBackend::connect(url)?))
        });
        r
    }
}

impl BackendRegistry {
    pub fn register(&mut self, name: &'static str, factory: BackendFactory) {
        self.factories.insert(name, factory);
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.factories.keys().copied()
    }

    pub fn build(&self, spec: &str) -> Result<Arc<dyn GeneratorBackend>, GeneratorError> {
        let (name, arg) = match spec.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (spec, None),
        };
        let factory = self
            .factories
            .get(name)
            .ok_or_else(|| GeneratorError::UnknownStrategy { kind: "backend", name: name.to_string() })?;
        factory(arg)
    }
}

/// Decoding strategies by name.
pub struct DecoderRegistry {
    decoders: BTreeMap<&'static str, Arc<dyn Decoder>>,
}

impl Default for DecoderRegistry {
    fn default() -> Self {
        let mut r = DecoderRegistry { decoders: BTreeMap::new() };
        r.register(Arc::new(PerturbedDecoder));
        r.register(Arc::new(GreedyDecoder));
        r
    }
}

impl DecoderRegistry {
    pub fn register(&mut self, decoder: Arc<dyn Decoder>) {
        self.decoders.insert(decoder.name(), decoder);
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn Decoder>, GeneratorError> {
        self.decoders
            .get(name)
            .cloned()
            .ok_or_else(|| GeneratorError::UnknownStrategy { kind: "decoder", name: name.to_string() })
    }
}
