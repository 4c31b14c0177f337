#include <catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <sstream>

#include "poca/corpus.hpp"
#include "poca/evalreport.hpp"
#include "poca/rewards.hpp"
#include "poca/summarizer.hpp"

using namespace poca;
using namespace poca::eval;
using Catch::Approx;

namespace {

struct Fixture {
    corpus::CorpusBundle bundle;
    std::shared_ptr<const text::Vocab> vocab;
    rewards::RewardModels models;
};

const Fixture& fixture() {
    static const Fixture f = [] {
        corpus::CorpusConfig cc;
        cc.train_clusters = 16;
        cc.dev_clusters = 4;
        cc.test_clusters = 30;
        auto bundle = corpus::generate_corpus(cc, 31);
        auto vocab = std::make_shared<const text::Vocab>(text::Vocab::build(bundle.all_texts(), 1));
        rewards::TrainConfig tc;
        rewards::RewardModels models{rewards::train_polarity_model(vocab, bundle.polarity_sentences, tc, 1).model,
                                     rewards::train_similarity_model(vocab, bundle.similarity_pairs, tc, 2).model,
                                     rewards::train_fluency_model(vocab, bundle.acceptability_pairs, tc, 3).model};
        return Fixture{std::move(bundle), vocab, std::move(models)};
    }();
    return f;
}

// Scores a text by its first word only.
rewards::PolarityModel scripted_polarity(const std::map<std::string, double>& scores) {
    auto vocab = std::make_shared<const text::Vocab>(
        text::Vocab::from_tokens({"<pad>", "<bos>", "<eos>", "<unk>", "<sep>", "a", "b", "c", "d", "."}));
    rewards::PolarityModel m(vocab, {.embedding_dim = 1, .hidden_dim = 1, .max_tokens = 1}, 0);
    auto& p = m.params();
    p.get("hidden.w").value[0] = 1.0;
    p.get("hidden.b").value[0] = 0.0;
    p.get("out.w").value[0] = 5.0;
    p.get("out.b").value[0] = 0.0;
    for (const auto& [word, s] : scores) {
        p.get("embedding").value[static_cast<std::size_t>(vocab->id(word))] = std::atanh(std::log(s / (1 - s)) / 5.0);
    }
    return m;
}

corpus::OpinionCluster one_sentence_cluster(const std::string& id, const std::string& sentence) {
    corpus::OpinionCluster c;
    c.id = id;
    c.mode = corpus::Mode::reviews;
    c.inputs.push_back(corpus::Document{{sentence}, std::nullopt});
    c.reference.sentences = {sentence};
    return c;
}

summ::SummarizerModel tiny_summarizer() {
    summ::ArchConfig a;
    a.embedding_dim = 6;
    a.hidden_dim = 8;
    a.attention_dim = 5;
    a.max_summary_length = 10;
    return summ::SummarizerModel(fixture().vocab, a, 3);
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::filesystem::path scratch(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / "poca_eval_test";
    std::filesystem::create_directories(dir);
    return dir / name;
}

}  // namespace

TEST_CASE("polarity distance hand values") {
    const auto m = scripted_polarity({{"a", 0.5}, {"b", 0.6}, {"d", 0.2}});
    const std::vector<corpus::OpinionCluster> cs = {one_sentence_cluster("x", "a."), one_sentence_cluster("y", "a.")};
    const auto r = polarity_distance_metrics(m, cs, {"b.", "d."}, corpus::Mode::reviews);
    CHECK(r.mae == Approx(0.2));
    CHECK(r.rmse == Approx(std::sqrt(0.05)));
    CHECK(r.rmse == Approx(0.2236).margin(1e-4));

    const auto zero = polarity_distance_metrics(m, cs, {"a.", "a."}, corpus::Mode::reviews);
    CHECK(zero.rmse == 0.0);
    CHECK(zero.mae == 0.0);
}

TEST_CASE("empty summaries score neutral and bad shapes throw") {
    const auto m = scripted_polarity({{"a", 0.9}});
    const std::vector<corpus::OpinionCluster> cs = {one_sentence_cluster("x", "a.")};
    const auto s = bias_points(m, cs, {""}, corpus::Mode::reviews);
    REQUIRE(s.points.size() == 1);
    CHECK(s.points[0].output_polarity == 0.5);
    CHECK(s.points[0].input_polarity == Approx(0.9));
    CHECK_THROWS_AS(bias_points(m, cs, {"a.", "a."}, corpus::Mode::reviews), std::invalid_argument);
    CHECK_THROWS_AS(polarity_distance_metrics(m, {}, {}, corpus::Mode::reviews), std::invalid_argument);
}

TEST_CASE("mode argument chooses the aggregation") {
    const auto m = scripted_polarity({{"a", 0.9}, {"b", 0.1}});
    corpus::OpinionCluster c;
    c.id = "m";
    c.mode = corpus::Mode::reviews;
    c.inputs.push_back(corpus::Document{{"a.", "a.", "a."}, std::nullopt});
    c.inputs.push_back(corpus::Document{{"b."}, std::nullopt});
    c.reference.sentences = {"a."};
    const std::vector<corpus::OpinionCluster> cs = {c};
    CHECK(bias_points(m, cs, {"a."}, corpus::Mode::reviews).points[0].input_polarity == Approx(0.7));
    CHECK(bias_points(m, cs, {"a."}, corpus::Mode::articles).points[0].input_polarity == Approx(0.5));
}

TEST_CASE("references of the generated corpus sit near the diagonal") {
    const auto& f = fixture();
    std::vector<std::string> refs;
    for (const auto& c : f.bundle.test) refs.push_back(c.reference.text());
    const auto s = bias_points(f.models.polarity, f.bundle.test, refs, corpus::Mode::reviews, "reference");
    CHECK(s.points.size() == f.bundle.test.size());
    CHECK(metrics_from_points(s).mae < 0.25);
}

TEST_CASE("report invariants and scatter consistency") {
    const auto& f = fixture();
    const auto model = tiny_summarizer();
    const auto summaries = generate_summaries(model, f.bundle.test);
    const auto r = evaluate_summaries("tiny", f.models.polarity, f.bundle.test, summaries, corpus::Mode::reviews);
    CHECK(r.rmse >= r.mae);
    CHECK(r.mae >= 0.0);
    CHECK(r.rouge2 <= r.rouge1);
    for (double v : {r.rouge1, r.rouge2, r.rougeL, r.rougeLsum}) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
    const auto s = bias_points(f.models.polarity, f.bundle.test, summaries, corpus::Mode::reviews);
    CHECK(std::fabs(metrics_from_points(s).rmse - r.rmse) < 1e-12);
    const auto direct = evaluate_model("tiny", model, f.models.polarity, f.bundle.test, corpus::Mode::reviews);
    CHECK(direct.rmse == r.rmse);
    CHECK(direct.rouge1 == r.rouge1);

    std::vector<std::string> refs;
    for (const auto& c : f.bundle.test) refs.push_back(c.reference.text());
    const auto ideal = evaluate_summaries("ref", f.models.polarity, f.bundle.test, refs, corpus::Mode::reviews);
    CHECK(ideal.rouge1 == Approx(1.0));
    CHECK(ideal.rougeLsum == Approx(1.0));
}

TEST_CASE("scatter svg is deterministic and complete") {
    BiasScatter s{"base <model>", {{"c1", 0.2, 0.9}, {"c2", 0.75, 0.75}}};
    const auto svg = scatter_svg(s);
    CHECK(svg == scatter_svg(s));
    CHECK(svg.find("width=\"600\" height=\"600\"") != std::string::npos);
    CHECK(svg.find("stroke=\"green\"") != std::string::npos);
    CHECK(svg.find("base &lt;model&gt;") != std::string::npos);
    std::size_t circles = 0;
    for (auto pos = svg.find("<circle"); pos != std::string::npos; pos = svg.find("<circle", pos + 1)) ++circles;
    CHECK(circles == 2);
    // y=x guide runs from the origin corner to the top-right corner.
    CHECK(svg.find("x1=\"60.0\" y1=\"540.0\" x2=\"540.0\" y2=\"60.0\" stroke=\"green\"") != std::string::npos);

    const auto svg_path = scratch("scatter.svg"), csv_path = scratch("scatter_points.csv");
    write_scatter(s, svg_path, csv_path);
    CHECK(slurp(svg_path) == svg);
    CHECK(slurp(csv_path) ==
          "cluster_id,input_polarity,output_polarity\nc1,0.2000000000,0.9000000000\nc2,0.7500000000,0.7500000000\n");

    BiasScatter single{"one", {{"only", 0.5, 0.5}}};
    const auto one = scatter_svg(single);
    CHECK(one.find("<circle") == one.rfind("<circle"));
}

TEST_CASE("report upsert replaces rows by model name") {
    const auto path = scratch("report.csv");
    std::filesystem::remove(path);
    upsert_report(path, {"base", 0.3, 0.2, 0.5, 0.3, 0.45, 0.46});
    upsert_report(path, {"calibrated", 0.2, 0.15, 0.49, 0.29, 0.44, 0.45});
    const auto first = slurp(path);
    upsert_report(path, {"base", 0.3, 0.2, 0.5, 0.3, 0.45, 0.46});
    CHECK(slurp(path) == first);
    upsert_report(path, {"base", 0.25, 0.2, 0.5, 0.3, 0.45, 0.46});
    const auto rows = read_report(path);
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].model == "base");
    CHECK(rows[0].rmse == 0.25);
    CHECK(rows[1].model == "calibrated");
    CHECK(slurp(path).rfind(report_header() + "\n", 0) == 0);
    CHECK_THROWS_AS(upsert_report(path, {"a,b", 0, 0, 0, 0, 0, 0}), ConfigError);

    std::ofstream(path) << "bad header\n";
    CHECK_THROWS_AS(read_report(path), ParseError);
    std::ofstream(path) << report_header() << "\nbase,1,2\n";
    CHECK_THROWS_AS(read_report(path), ParseError);
    std::filesystem::remove(path);
}

TEST_CASE("ablation table has a base row plus one per configuration") {
    const auto& f = fixture();
    const auto base = tiny_summarizer();
    calib::RLConfig rl;
    rl.lr = 1e-2;
    rl.batch_size = 2;
    rl.max_steps = 2;
    rl.probe_every = 1;
    const auto table = ablation_run(base, f.bundle.train, f.bundle.dev, f.bundle.test, f.models, standard_ablation(),
                                    rl, corpus::Mode::reviews);
    REQUIRE(table.runs.size() == 3);
    const auto direct = evaluate_model("base", base, f.models.polarity, f.bundle.test, corpus::Mode::reviews);
    CHECK(table.base.rmse == direct.rmse);
    CHECK(table.base.rouge1 == direct.rouge1);
    CHECK(table.runs[0].config.weights == rewards::RewardWeights{1.0, 0.0, 0.0});
    for (const auto& run : table.runs) {
        CHECK(run.report.model == run.config.name);
        CHECK(run.result.log.size() == 3);
    }

    const auto path = scratch("ablation.csv");
    write_ablation_csv(table, path);
    const auto body = slurp(path);
    std::size_t lines = 0;
    for (char ch : body) lines += ch == '\n';
    CHECK(lines == 5);
    CHECK(body.rfind("config,alpha,beta,gamma,rmse,", 0) == 0);
    CHECK(body.find("\nbase,,,,") != std::string::npos);
    CHECK(body.find("\npolarity,1,0,0,") != std::string::npos);

    const auto again = ablation_run(base, f.bundle.train, f.bundle.dev, f.bundle.test, f.models, standard_ablation(),
                                    rl, corpus::Mode::reviews);
    const auto path2 = scratch("ablation2.csv");
    write_ablation_csv(again, path2);
    CHECK(slurp(path2) == body);

    CHECK_THROWS_AS(ablation_run(base, f.bundle.train, f.bundle.dev, f.bundle.test, f.models, {}, rl,
                                 corpus::Mode::reviews),
                    ConfigError);
}
