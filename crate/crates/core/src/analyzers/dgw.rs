use serde_json::json;

use super::{
    compute_network_entry_point, contribute_seeds, estimate_gateway_by_singleton,
    estimate_gateway_by_trace, estimate_gateway_by_usual_suspects, resolve_gateways,
    EstimateSet, EstimatorConfig,
};
use crate::adapters::{
    AdapterDescriptor, AdapterError, AdapterMode, AnalysisContext, AnalysisOutcome,
    AnalyzerModule, OptionSpec, OptionType,
};
use crate::model::{Dataset, EstimateMethod, ModuleInvocation, ModuleKind, TracePath};

pub const DGW_ANALYZER_ID: &str = "dgw-analyzer";

/// Registry module around the gateway estimators.
#[derive(Debug, Clone, Default)]
pub struct DefaultGatewayAnalyzer;

fn config_from(inv: &ModuleInvocation) -> EstimatorConfig {
    let mut cfg = EstimatorConfig::default();
    let num = |k: &str| inv.options.get(k).and_then(|v| v.as_f64());
    if let Some(v) = num("trace_confidence") {
        cfg.trace_confidence = v;
    }
    if let Some(v) = num("singleton_confidence") {
        cfg.singleton_confidence = v;
    }
    if let Some(v) = num("usual_suspect_confidence") {
        cfg.usual_suspect_confidence = v;
    }
    if let Some(finals) = inv.options.get("usual_finals").and_then(|v| v.as_array()) {
        cfg.usual_finals = finals
            .iter()
            .filter_map(|f| f.as_u64())
            .filter_map(|f| u8::try_from(f).ok())
            .collect();
    }
    cfg
}

impl AnalyzerModule for DefaultGatewayAnalyzer {
    fn descriptor(&self) -> AdapterDescriptor {
        let d = EstimatorConfig::default();
        AdapterDescriptor {
            module_id: DGW_ANALYZER_ID.to_string(),
            kind: ModuleKind::Analyzer,
            supported_options: vec![
                OptionSpec::new("trace_confidence", OptionType::Number, json!(d.trace_confidence)),
                OptionSpec::new("singleton_confidence", OptionType::Number, json!(d.singleton_confidence)),
                OptionSpec::new("usual_suspect_confidence", OptionType::Number, json!(d.usual_suspect_confidence)),
                OptionSpec::new("usual_finals", OptionType::NumberList, json!(d.usual_finals)),
            ],
            mode: AdapterMode::Internal,
        }
    }

    fn analyze(
        &self,
        inv: &ModuleInvocation,
        ctx: &AnalysisContext,
        dataset: &Dataset,
    ) -> Result<AnalysisOutcome, AdapterError> {
        let cfg = config_from(inv);
        let mut outcome = AnalysisOutcome::default();
        let mut set = EstimateSet::new();

        match ctx.scanner_gateway {
            Some(dgw) => {
                for node in dataset.nodes.values() {
                    if let Some(e) = estimate_gateway_by_trace(node, dgw, &cfg, ctx.iteration) {
                        set.add(e);
                    }
                }
            }
            None => outcome
                .notes
                .push("scanner gateway unknown; trace estimates skipped".to_string()),
        }
        set.extend(estimate_gateway_by_singleton(dataset, &cfg, ctx.iteration));
        set.extend(estimate_gateway_by_usual_suspects(&dataset.meta.targets, dataset, &cfg, ctx.iteration));

        // earlier resolutions stand in for methods not recomputed this pass
        for node in dataset.nodes.values() {
            if let Some(existing) = &node.gateway {
                let fresh = set.candidates_for(node.node_id).any(|c| c.method == existing.method);
                if !fresh || existing.method == EstimateMethod::Manual {
                    set.add(existing.clone());
                }
            }
        }

        for (id, est) in resolve_gateways(&set) {
            if dataset.node(id).and_then(|n| n.gateway.as_ref()) != Some(&est) {
                outcome.gateways.insert(id, est);
            }
        }

        let traces: Vec<&TracePath> = dataset
            .nodes
            .values()
            .filter(|n| !n.is_router())
            .filter_map(|n| n.latest_trace())
            .collect();
        if let Some(dgw) = ctx.scanner_gateway {
            match compute_network_entry_point(&traces, dgw) {
                Ok(nep) => outcome.network_entry_point = Some(nep),
                Err(e) => outcome.notes.push(format!("network entry point: {e}")),
            }
        }

        outcome.seeds = contribute_seeds(dataset, &ctx.label, ctx.iteration);
        Ok(outcome)
    }
}
