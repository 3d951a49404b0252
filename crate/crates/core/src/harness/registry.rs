// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use super::{Compiler, ExecCompiler, FaultlineCompiler, FaultlineSpec, HarnessError};

type CompilerFactory = fn(&str) -> Result<Arc<dyn Compiler>, HarnessError>;

/// Compiler adapters by scheme: `faultline:<spec.json>` or `exec:<binary>`.
pub struct CompilerRegistry {
    factories: BTreeMap<&'static str, CompilerFactory>,
}

impl Default for CompilerRegistry {
    fn default() -> Self {
        let mut r = CompilerRegistry { factories: BTreeMap::new() };
        r.register("faultline", |arg| {
            let spec = FaultlineSpec::load(Path::new(arg))?;
            Ok(Arc::new(FaultlineCompiler::new(spec)?.with_label(format!("faultline:{arg}"))))
        });
        r.register("exec", |arg| Ok(Arc::new(ExecCompiler::new(arg)?)));
        r
    }
}

impl CompilerRegistry {
    pub fn register(&mut self, scheme: &'static str, factory: CompilerFactory) {
        self.factories.insert(scheme, factory);
    }

    pub fn build(&self, spec: &str) -> Result<Arc<dyn Compiler>, HarnessError> {
        let (scheme, arg) = spec.split_once(':').ok_or_else(|| HarnessError::UnknownCompiler(spec.to_string()))?;
        let factory = self.factories.get(scheme).ok_or_else(|| HarnessError::UnknownCompiler(scheme.to_string()))?;
        factory(arg)
    }
}
