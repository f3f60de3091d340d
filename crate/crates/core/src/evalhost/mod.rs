//! Downstream classifier, its evaluation, stratified cross-validation and the
//! real-data-reduction sweep comparing raw and augmented training.

mod classifier;
mod cv;

pub use classifier::{
    check_classifier_grads, classifier_features, classifier_forward, classifier_head, evaluate, init_classifier,
    train_classifier, ClassifierBundle, ClassifierConfig, EpochRecord, Evaluation, CLASSIFIER_CHANNELS, FEATURE_SIZE,
};
pub use cv::{
    cross_validate, cross_validate_with_models, fold_is_clean, mean_std, reduction_sweep, run_single_fold, stratified_folds, CvContext,
    FoldResult, FoldResults, SweepCell, SweepConfigEcho, SweepReport, SweepRow, DEFAULT_FOLDS, DEFAULT_FRACTIONS,
};
