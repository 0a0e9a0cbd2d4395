mod loss;
mod mask;
mod run;

pub use loss::{relative_l2, RelativeL2};
pub use mask::{apply_mask, apply_mask_mode, Mask, MaskMode, MaskSpec};
pub use run::{
    evaluate, finetune, finetune_on_pairs, freeze_for_finetune, holdout_split, masked_eval_inputs, next_step_pairs,
    pretrain, select_variables, write_record, EpochRecord, Evaluation, FinetuneReport, PairSplit, Phase, TrainPlan,
};
