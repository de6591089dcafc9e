//! Evaluation protocols: held-out MCQ accuracy, the open-set judge,
//! visual-attention comparison and the ablation harness.

mod ablation;
mod attention;
mod eval;
mod judge;

pub use ablation::{
    run_ablation, AblationAxis, AblationRow, AblationSetup, AblationTable, SftSharing,
    FINAL_WINDOW,
};
pub use attention::{attention_wr_ir, compare_attention, AttentionComparison, SampleAttention};
pub use eval::{
    evaluate_judge, evaluate_mcq, greedy_answer, open_set_completion, EvalRecord, JudgeMetrics,
    McqMetrics, METRICS_SCHEMA, METRICS_SCHEMA_VERSION,
};
pub use judge::{judge_compare, win_rate, JudgeVerdict, ReasonCode};
