use super::dataset::Dataset;
use super::trainer::{EpochLog, Trainer};
use super::{Result, TrainConfig, TrainError};
use crate::au::DatasetTag;
use crate::eval::EvalReport;
use crate::model::{swap_head, ModelConfig, ParameterSet};

/// One dataset of the two-stage protocol: its head and its splits.
#[derive(Debug, Clone)]
pub struct Stage<'a> {
    pub tag: DatasetTag,
    pub train: &'a Dataset,
    pub test: &'a Dataset,
    pub config: TrainConfig,
}

#[derive(Debug, Clone)]
pub struct FinetuneOutcome {
    pub model_config: ModelConfig,
    pub params: ParameterSet,
    pub pretrain_report: EvalReport,
    pub finetune_report: EvalReport,
    pub pretrain_log: Vec<EpochLog>,
    pub finetune_log: Vec<EpochLog>,
    pub init_checksum: u64,
    pub pretrained_checksum: u64,
}

/// Trains a fresh model on `pretrain`, swaps in a new head for
/// `finetune.tag` and trains every parameter on `finetune`.
pub fn pretrain_then_finetune(
    backbone: &ModelConfig,
    pretrain: Stage<'_>,
    finetune: Stage<'_>,
) -> Result<FinetuneOutcome> {
    for st in [&pretrain, &finetune] {
        if st.train.au_ids() != st.tag.au_ids() || st.test.au_ids() != st.tag.au_ids() {
            return Err(TrainError::Dataset(format!(
                "labels do not match the {} AU set",
                st.tag.name()
            )));
        }
    }
    let mut cfg_a = backbone.clone();
    cfg_a.num_aus = pretrain.tag.num_aus();
    let init = ParameterSet::init(&cfg_a, pretrain.config.seed, Some(pretrain.tag))?;
    let init_checksum = init.backbone_checksum();

    let mut a = Trainer::new(cfg_a.clone(), init, pretrain.config.clone())?;
    let pretrain_log = a.fit(pretrain.train, None, None)?;
    let pretrain_report = a.evaluate(pretrain.test)?;
    let pretrained = a.into_params();
    let pretrained_checksum = pretrained.backbone_checksum();

    let (cfg_b, params_b) = swap_head(&cfg_a, &pretrained, finetune.tag, finetune.config.seed)?;
    let mut b = Trainer::new(cfg_b.clone(), params_b, finetune.config.clone())?;
    let finetune_log = b.fit(finetune.train, None, None)?;
    let finetune_report = b.evaluate(finetune.test)?;
    Ok(FinetuneOutcome {
        model_config: cfg_b,
        params: b.into_params(),
        pretrain_report,
        finetune_report,
        pretrain_log,
        finetune_log,
        init_checksum,
        pretrained_checksum,
    })
}
