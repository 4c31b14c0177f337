#pragma once

// Evaluation artifacts: per-model report rows, the input/output polarity
// scatter, and the reward ablation table.

#include <filesystem>
#include <string>
#include <vector>

#include "poca/calibrate.hpp"
#include "poca/corpus.hpp"
#include "poca/metrics.hpp"
#include "poca/rewards.hpp"
#include "poca/summarizer.hpp"

namespace poca::eval {

struct EvalReport {
    std::string model;
    double rmse = 0.0;
    double mae = 0.0;
    double rouge1 = 0.0;
    double rouge2 = 0.0;
    double rougeL = 0.0;
    double rougeLsum = 0.0;
};

struct ScatterPoint {
    std::string cluster_id;
    double input_polarity = 0.0;
    double output_polarity = 0.0;
};

struct BiasScatter {
    std::string model;
    std::vector<ScatterPoint> points;
};

/// Greedy summary text for each cluster.
std::vector<std::string> generate_summaries(const summ::SummarizerModel& model,
                                            const std::vector<corpus::OpinionCluster>& clusters);

/// One point per cluster, aggregated under `mode`. An empty summary scores
/// 0.5. Throws std::invalid_argument on a size mismatch or no clusters.
BiasScatter bias_points(const rewards::PolarityModel& polarity, const std::vector<corpus::OpinionCluster>& clusters,
                        const std::vector<std::string>& summaries, corpus::Mode mode, std::string model_name = "");

/// Residuals are output minus input polarity.
metrics::PolarityMetrics metrics_from_points(const BiasScatter& scatter);

metrics::PolarityMetrics polarity_distance_metrics(const rewards::PolarityModel& polarity,
                                                   const std::vector<corpus::OpinionCluster>& clusters,
                                                   const std::vector<std::string>& summaries, corpus::Mode mode);

/// Polarity distance and mean Rouge against the references.
EvalReport evaluate_summaries(const std::string& name, const rewards::PolarityModel& polarity,
                              const std::vector<corpus::OpinionCluster>& clusters,
                              const std::vector<std::string>& summaries, corpus::Mode mode);

EvalReport evaluate_model(const std::string& name, const summ::SummarizerModel& model,
                          const rewards::PolarityModel& polarity, const std::vector<corpus::OpinionCluster>& clusters,
                          corpus::Mode mode);

/// 600x600 SVG on the unit square with a y=x guide. Same input, same bytes.
std::string scatter_svg(const BiasScatter& scatter);
/// Writes `svg_path` and a points CSV (cluster_id,input_polarity,output_polarity).
void write_scatter(const BiasScatter& scatter, const std::filesystem::path& svg_path,
                   const std::filesystem::path& csv_path);

std::string report_header();
std::string report_row(const EvalReport& r);
/// Parses a report CSV; a missing file is an empty report. Throws ParseError.
std::vector<EvalReport> read_report(const std::filesystem::path& path);
/// Replaces the row with the same model name in place, or appends.
void upsert_report(const std::filesystem::path& path, const EvalReport& row);

struct AblationConfig {
    std::string name;
    rewards::RewardWeights weights;
};

/// Polarity only; polarity and content; all three rewards.
std::vector<AblationConfig> standard_ablation();

struct AblationRun {
    AblationConfig config;
    EvalReport report;
    calib::CalibrationResult result;
};

struct AblationTable {
    EvalReport base;
    std::vector<AblationRun> runs;
};

/// Calibrates once per configuration from the same base and RL config, then
/// evaluates each on `eval_clusters`. Throws ConfigError when `configs` is
/// empty.
AblationTable ablation_run(const summ::SummarizerModel& base, const std::vector<corpus::OpinionCluster>& train,
                           const std::vector<corpus::OpinionCluster>& probe_clusters,
                           const std::vector<corpus::OpinionCluster>& eval_clusters,
                           const rewards::RewardModels& models, const std::vector<AblationConfig>& configs,
                           const calib::RLConfig& rl, corpus::Mode mode);

/// Columns: config,alpha,beta,gamma,rmse,mae,rouge1,rouge2,rougeL,rougeLsum,best_step.
/// The base row has empty weights and best_step.
void write_ablation_csv(const AblationTable& table, const std::filesystem::path& path);

}  // namespace poca::eval
