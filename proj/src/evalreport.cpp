#include "poca/evalreport.hpp"

#include <fmt/format.h>

#include <fstream>
#include <sstream>
#include <stdexcept>

#include "poca/log.hpp"
#include "poca/textproc.hpp"

namespace poca::eval {

std::vector<std::string> generate_summaries(const summ::SummarizerModel& model,
                                            const std::vector<corpus::OpinionCluster>& clusters) {
    std::vector<std::string> out;
    out.reserve(clusters.size());
    for (const auto& c : clusters) {
        out.push_back(text::detokenize(summ::greedy_decode(model, model.input_ids(c)), model.vocab()));
    }
    return out;
}

BiasScatter bias_points(const rewards::PolarityModel& polarity, const std::vector<corpus::OpinionCluster>& clusters,
                        const std::vector<std::string>& summaries, corpus::Mode mode, std::string model_name) {
    if (clusters.empty()) throw std::invalid_argument("polarity metrics: no clusters");
    if (clusters.size() != summaries.size()) {
        throw std::invalid_argument(
            fmt::format("polarity metrics: {} clusters but {} summaries", clusters.size(), summaries.size()));
    }
    BiasScatter s;
    s.model = std::move(model_name);
    for (std::size_t i = 0; i < clusters.size(); ++i) {
        double in = 0.0;
        if (clusters[i].mode == mode) {
            in = rewards::polarity_of_input(polarity, clusters[i]);
        } else {
            corpus::OpinionCluster c = clusters[i];
            c.mode = mode;
            in = rewards::polarity_of_input(polarity, c);
        }
        const auto summary = rewards::summary_from_text(summaries[i]);
        const double out = summary.sentences.empty() ? 0.5 : rewards::polarity_of_summary(polarity, summary, mode);
        s.points.push_back({clusters[i].id, in, out});
    }
    return s;
}

metrics::PolarityMetrics metrics_from_points(const BiasScatter& scatter) {
    std::vector<double> residuals;
    residuals.reserve(scatter.points.size());
    for (const auto& p : scatter.points) residuals.push_back(p.output_polarity - p.input_polarity);
    return metrics::metrics_from_residuals(residuals);
}

metrics::PolarityMetrics polarity_distance_metrics(const rewards::PolarityModel& polarity,
                                                   const std::vector<corpus::OpinionCluster>& clusters,
                                                   const std::vector<std::string>& summaries, corpus::Mode mode) {
    return metrics_from_points(bias_points(polarity, clusters, summaries, mode));
}

EvalReport evaluate_summaries(const std::string& name, const rewards::PolarityModel& polarity,
                              const std::vector<corpus::OpinionCluster>& clusters,
                              const std::vector<std::string>& summaries, corpus::Mode mode) {
    const auto pm = polarity_distance_metrics(polarity, clusters, summaries, mode);
    EvalReport r;
    r.model = name;
    r.rmse = pm.rmse;
    r.mae = pm.mae;
    for (std::size_t i = 0; i < clusters.size(); ++i) {
        const auto s = metrics::rouge_all(summaries[i], clusters[i].reference.text());
        r.rouge1 += s.rouge1;
        r.rouge2 += s.rouge2;
        r.rougeL += s.rougeL;
        r.rougeLsum += s.rougeLsum;
    }
    const double n = static_cast<double>(clusters.size());
    r.rouge1 /= n;
    r.rouge2 /= n;
    r.rougeL /= n;
    r.rougeLsum /= n;
    return r;
}

EvalReport evaluate_model(const std::string& name, const summ::SummarizerModel& model,
                          const rewards::PolarityModel& polarity, const std::vector<corpus::OpinionCluster>& clusters,
                          corpus::Mode mode) {
    return evaluate_summaries(name, polarity, clusters, generate_summaries(model, clusters), mode);
}

namespace {

std::string xml_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

void write_text(const std::filesystem::path& path, const std::string& body) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out << body;
    if (!out) throw DataError("write failed for " + path.string());
}

void check_name(const std::string& name) {
    if (name.empty() || name.find_first_of(",\n\r\"") != std::string::npos) {
        throw ConfigError("report: model name must be non-empty without commas, quotes or newlines: '" + name + "'");
    }
}

}  // namespace

std::string scatter_svg(const BiasScatter& scatter) {
    constexpr double size = 600.0, margin = 60.0, span = size - 2 * margin;
    auto px = [&](double v) { return margin + v * span; };
    auto py = [&](double v) { return size - margin - v * span; };
    std::string svg;
    svg += R"(<svg xmlns="http://www.w3.org/2000/svg" width="600" height="600" viewBox="0 0 600 600">)";
    svg += "\n<rect x=\"0\" y=\"0\" width=\"600\" height=\"600\" fill=\"white\"/>\n";
    svg += fmt::format("<rect x=\"{:.1f}\" y=\"{:.1f}\" width=\"{:.1f}\" height=\"{:.1f}\" fill=\"none\" stroke=\"black\"/>\n",
                       margin, margin, span, span);
    for (int k = 0; k <= 4; ++k) {
        const double v = k / 4.0;
        svg += fmt::format("<line x1=\"{:.1f}\" y1=\"{:.1f}\" x2=\"{:.1f}\" y2=\"{:.1f}\" stroke=\"black\"/>\n", px(v),
                           py(0), px(v), py(0) + 6);
        svg += fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\" font-size=\"12\" text-anchor=\"middle\">{:.2f}</text>\n",
                           px(v), py(0) + 20, v);
        svg += fmt::format("<line x1=\"{:.1f}\" y1=\"{:.1f}\" x2=\"{:.1f}\" y2=\"{:.1f}\" stroke=\"black\"/>\n", px(0) - 6,
                           py(v), px(0), py(v));
        svg += fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\" font-size=\"12\" text-anchor=\"end\">{:.2f}</text>\n",
                           px(0) - 10, py(v) + 4, v);
    }
    svg += fmt::format("<line x1=\"{:.1f}\" y1=\"{:.1f}\" x2=\"{:.1f}\" y2=\"{:.1f}\" stroke=\"green\" stroke-width=\"2\"/>\n",
                       px(0), py(0), px(1), py(1));
    for (const auto& p : scatter.points) {
        svg += fmt::format(
            "<circle cx=\"{:.2f}\" cy=\"{:.2f}\" r=\"4\" fill=\"steelblue\" fill-opacity=\"0.6\"><title>{}</title></circle>\n",
            px(p.input_polarity), py(p.output_polarity), xml_escape(p.cluster_id));
    }
    svg += fmt::format("<text x=\"300\" y=\"{:.1f}\" font-size=\"14\" text-anchor=\"middle\">input polarity</text>\n",
                       size - 15);
    svg += fmt::format(
        "<text x=\"18\" y=\"300\" font-size=\"14\" text-anchor=\"middle\" transform=\"rotate(-90 18 300)\">output "
        "polarity</text>\n");
    svg += fmt::format("<text x=\"300\" y=\"35\" font-size=\"16\" text-anchor=\"middle\">{}</text>\n",
                       xml_escape(scatter.model));
    svg += "</svg>\n";
    return svg;
}

void write_scatter(const BiasScatter& scatter, const std::filesystem::path& svg_path,
                   const std::filesystem::path& csv_path) {
    write_text(svg_path, scatter_svg(scatter));
    std::string csv = "cluster_id,input_polarity,output_polarity\n";
    for (const auto& p : scatter.points) {
        csv += fmt::format("{},{:.10f},{:.10f}\n", p.cluster_id, p.input_polarity, p.output_polarity);
    }
    write_text(csv_path, csv);
}

std::string report_header() { return "model,rmse,mae,rouge1,rouge2,rougeL,rougeLsum"; }

std::string report_row(const EvalReport& r) {
    return fmt::format("{},{:.6f},{:.6f},{:.6f},{:.6f},{:.6f},{:.6f}", r.model, r.rmse, r.mae, r.rouge1, r.rouge2,
                       r.rougeL, r.rougeLsum);
}

std::vector<EvalReport> read_report(const std::filesystem::path& path) {
    std::vector<EvalReport> rows;
    if (!std::filesystem::exists(path)) return rows;
    std::ifstream in(path);
    if (!in) throw DataError("cannot read " + path.string());
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (n == 1) {
            if (line != report_header()) throw ParseError(path.string() + ": unexpected report header", n);
            continue;
        }
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) f.push_back(cell);
        if (f.size() != 7) throw ParseError(fmt::format("{}: expected 7 fields, got {}", path.string(), f.size()), n);
        try {
            rows.push_back({f[0], std::stod(f[1]), std::stod(f[2]), std::stod(f[3]), std::stod(f[4]), std::stod(f[5]),
                            std::stod(f[6])});
        } catch (const std::exception&) {
            throw ParseError(path.string() + ": non-numeric field", n);
        }
    }
    return rows;
}

void upsert_report(const std::filesystem::path& path, const EvalReport& row) {
    check_name(row.model);
    auto rows = read_report(path);
    bool replaced = false;
    for (auto& r : rows) {
        if (r.model == row.model) {
            r = row;
            replaced = true;
        }
    }
    if (!replaced) rows.push_back(row);
    std::string body = report_header() + "\n";
    // Rows read back are already rounded, so rewriting them is byte-stable.
    for (const auto& r : rows) body += report_row(r) + "\n";
    write_text(path, body);
}

std::vector<AblationConfig> standard_ablation() {
    return {{"polarity", {1.0, 0.0, 0.0}},
            {"polarity_content", {1.0, 0.5, 0.0}},
            {"polarity_content_language", {1.0, 0.5, 0.2}}};
}

AblationTable ablation_run(const summ::SummarizerModel& base, const std::vector<corpus::OpinionCluster>& train,
                           const std::vector<corpus::OpinionCluster>& probe_clusters,
                           const std::vector<corpus::OpinionCluster>& eval_clusters,
                           const rewards::RewardModels& models, const std::vector<AblationConfig>& configs,
                           const calib::RLConfig& rl, corpus::Mode mode) {
    if (configs.empty()) throw ConfigError("ablation: no configurations");
    for (const auto& c : configs) {
        check_name(c.name);
        c.weights.validate();
    }
    AblationTable table;
    table.base = evaluate_model("base", base, models.polarity, eval_clusters, mode);
    for (const auto& c : configs) {
        log::info("ablation: calibrating '{}' with weights ({}, {}, {})", c.name, c.weights.alpha, c.weights.beta,
                  c.weights.gamma);
        auto result = calib::calibrate(base, train, probe_clusters, models, c.weights, rl);
        auto report = evaluate_model(c.name, result.model, models.polarity, eval_clusters, mode);
        table.runs.push_back({c, std::move(report), std::move(result)});
    }
    return table;
}

void write_ablation_csv(const AblationTable& table, const std::filesystem::path& path) {
    auto metrics_cols = [](const EvalReport& r) {
        return fmt::format("{:.6f},{:.6f},{:.6f},{:.6f},{:.6f},{:.6f}", r.rmse, r.mae, r.rouge1, r.rouge2, r.rougeL,
                           r.rougeLsum);
    };
    std::string body = "config,alpha,beta,gamma,rmse,mae,rouge1,rouge2,rougeL,rougeLsum,best_step\n";
    body += fmt::format("{},,,,{},\n", table.base.model, metrics_cols(table.base));
    for (const auto& run : table.runs) {
        const auto& w = run.config.weights;
        body += fmt::format("{},{},{},{},{},{}\n", run.config.name, w.alpha, w.beta, w.gamma, metrics_cols(run.report),
                            run.result.best_step);
    }
    write_text(path, body);
}

}  // namespace poca::eval
