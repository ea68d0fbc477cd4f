//! Evaluation: metrics, dissimilarity embeddings, KNN and the fixed-cost grid.

pub mod embedding;
pub mod metrics;
pub mod pipeline;

pub use embedding::{distance_matrix, embed, knn_predict, pair_distance, select_prototypes, DissimilarityEmbedding};
pub use metrics::{
    average_ranks, kendall_tau, mean_std, r2, rank_metrics, rmse, roc_auc, spearman_rho,
    task_metrics, RankMetrics, Task, TaskMetric,
};
pub use pipeline::{
    evaluate_downstream, fold_indices, grid_configs, grid_search_costs, sample_triples, triple_accuracy,
    DownstreamReport, GridReport, GridRow, PipelineConfig,
};
