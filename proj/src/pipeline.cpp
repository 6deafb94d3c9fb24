#include "tabattack/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <stdexcept>

#include "tabattack/parallel.hpp"

namespace fs = std::filesystem;

namespace tabattack {

namespace {

std::string fmt17(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string fmt2(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
}

std::uint64_t fnv1a(const std::string& s, std::uint64_t h = 1469598103934665603ULL) {
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

std::string hex64(std::uint64_t h) {
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::vector<std::string> split_list(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == sep) {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

}  // namespace

nlohmann::json RunConfig::to_json() const {
    nlohmann::json j;
    j["out_dir"] = out_dir;
    j["data_csv"] = data_csv;
    j["schema_path"] = schema_path;
    j["do_synth"] = do_synth;
    j["synth"] = synth.to_json();
    j["preprocess"] = {{"label_column", preprocess.label_column},
                       {"missing_drop_threshold", preprocess.missing_drop_threshold},
                       {"correlation_threshold", preprocess.correlation_threshold},
                       {"winsorize", preprocess.winsorize},
                       {"winsor_lo", preprocess.winsor_lo},
                       {"winsor_hi", preprocess.winsor_hi}};
    j["split"] = {{"train_fraction", split.train_fraction},
                  {"validation_fraction", split.validation_fraction},
                  {"attack_set_size", split.attack_set_size},
                  {"stratified", split.stratified}};
    j["triplet"] = {{"margin", triplet.margin},
                    {"soft_margin", triplet.soft_margin},
                    {"classes_per_batch", triplet.classes_per_batch},
                    {"samples_per_class", triplet.samples_per_class},
                    {"epochs", triplet.epochs},
                    {"regression_bins", triplet.regression_bins},
                    {"learning_rate", triplet.optimizer.lr}};
    j["embedding_dim"] = embedding_dim;
    j["solver"] = {{"epochs", solver.epochs},
                   {"batch_size", solver.batch_size},
                   {"learning_rate", solver.optimizer.lr},
                   {"early_stop_patience", solver.early_stop_patience}};
    j["trees"] = trees.to_json();
    auto jt = nlohmann::json::array();
    for (TreeKind k : targets) jt.push_back(tree_kind_name(k));
    j["targets"] = jt;
    j["attack"] = attack.to_json();
    j["consistency"] = {{"penalty_weight", consistency.penalty_weight},
                        {"epsilon_percentile", consistency.epsilon_percentile},
                        {"histogram_bins", consistency.histogram_bins},
                        {"regression_bins", consistency.regression_bins}};
    j["write_traces"] = write_traces;
    j["seed"] = seed;
    j["jobs"] = jobs;
    return j;
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
    RunConfig c;
    c.out_dir = j.value("out_dir", c.out_dir);
    c.data_csv = j.value("data_csv", c.data_csv);
    c.schema_path = j.value("schema_path", c.schema_path);
    c.do_synth = j.value("do_synth", c.data_csv.empty());
    if (j.contains("synth")) c.synth = SynthSpec::from_json(j.at("synth"));
    if (j.contains("preprocess")) {
        const auto& jp = j.at("preprocess");
        c.preprocess.label_column = jp.value("label_column", c.preprocess.label_column);
        c.preprocess.missing_drop_threshold =
            jp.value("missing_drop_threshold", c.preprocess.missing_drop_threshold);
        c.preprocess.correlation_threshold =
            jp.value("correlation_threshold", c.preprocess.correlation_threshold);
        c.preprocess.winsorize = jp.value("winsorize", c.preprocess.winsorize);
        c.preprocess.winsor_lo = jp.value("winsor_lo", c.preprocess.winsor_lo);
        c.preprocess.winsor_hi = jp.value("winsor_hi", c.preprocess.winsor_hi);
    }
    if (j.contains("split")) {
        const auto& js = j.at("split");
        c.split.train_fraction = js.value("train_fraction", c.split.train_fraction);
        c.split.validation_fraction =
            js.value("validation_fraction", c.split.validation_fraction);
        c.split.attack_set_size = js.value("attack_set_size", c.split.attack_set_size);
        c.split.stratified = js.value("stratified", c.split.stratified);
    }
    if (j.contains("triplet")) {
        const auto& jt = j.at("triplet");
        c.triplet.margin = jt.value("margin", c.triplet.margin);
        c.triplet.soft_margin = jt.value("soft_margin", c.triplet.soft_margin);
        c.triplet.classes_per_batch =
            jt.value("classes_per_batch", c.triplet.classes_per_batch);
        c.triplet.samples_per_class =
            jt.value("samples_per_class", c.triplet.samples_per_class);
        c.triplet.epochs = jt.value("epochs", c.triplet.epochs);
        c.triplet.regression_bins = jt.value("regression_bins", c.triplet.regression_bins);
        c.triplet.optimizer.lr = jt.value("learning_rate", c.triplet.optimizer.lr);
    }
    c.embedding_dim = j.value("embedding_dim", c.embedding_dim);
    if (j.contains("solver")) {
        const auto& js = j.at("solver");
        c.solver.epochs = js.value("epochs", c.solver.epochs);
        c.solver.batch_size = js.value("batch_size", c.solver.batch_size);
        c.solver.optimizer.lr = js.value("learning_rate", c.solver.optimizer.lr);
        c.solver.early_stop_patience =
            js.value("early_stop_patience", c.solver.early_stop_patience);
    }
    if (j.contains("trees")) c.trees = TreeHyperparams::from_json(j.at("trees"));
    if (j.contains("targets")) {
        c.targets.clear();
        for (const auto& t : j.at("targets"))
            c.targets.push_back(tree_kind_from_name(t.get<std::string>()));
    }
    if (j.contains("attack")) c.attack = AttackConfig::from_json(j.at("attack"));
    if (j.contains("consistency")) {
        const auto& jc = j.at("consistency");
        c.consistency.penalty_weight =
            jc.value("penalty_weight", c.consistency.penalty_weight);
        c.consistency.epsilon_percentile =
            jc.value("epsilon_percentile", c.consistency.epsilon_percentile);
        c.consistency.histogram_bins =
            jc.value("histogram_bins", c.consistency.histogram_bins);
        c.consistency.regression_bins =
            jc.value("regression_bins", c.consistency.regression_bins);
    }
    c.write_traces = j.value("write_traces", c.write_traces);
    c.seed = j.value("seed", c.seed);
    c.jobs = j.value("jobs", c.jobs);
    return c;
}

RunConfig RunConfig::load(const std::string& path) {
    RunConfig c = from_json(read_json(path));
    if (const char* env = std::getenv("TABATTACK_SEED")) c.seed = std::strtoull(env, nullptr, 10);
    return c;
}

std::string RunConfig::config_hash() const { return hex64(fnv1a(to_json().dump())); }

std::uint64_t RunConfig::stage_seed(const std::string& stage) const {
    return fnv1a(stage, seed ^ 0x51ed270b74a4a7f5ULL);
}

void write_text(const std::string& path, const std::string& content) {
    fs::create_directories(fs::path(path).parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write '" + path + "'");
    out << content;
}

std::string read_text(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

nlohmann::json read_json(const std::string& path) {
    return nlohmann::json::parse(read_text(path));
}

void write_json_artifact(const std::string& path, nlohmann::json j, const RunConfig& cfg,
                         const std::string& stage) {
    j["_meta"] = {{"config_hash", cfg.config_hash()},
                  {"seed", cfg.stage_seed(stage)},
                  {"stage", stage}};
    write_text(path, j.dump(2) + "\n");
}

Dataset read_dataset_csv(const std::string& path, const Schema& schema) {
    const RawTable table = read_csv(path);
    Dataset data;
    std::vector<std::size_t> cols(schema.dimension());
    for (std::size_t f = 0; f < schema.dimension(); ++f)
        cols[f] = table.column_index(schema.feature(f).name);
    const std::size_t label_col = table.column_index("target");
    std::vector<double> x(schema.dimension());
    for (const auto& row : table.rows) {
        for (std::size_t f = 0; f < schema.dimension(); ++f)
            x[f] = std::strtod(row[cols[f]].c_str(), nullptr);
        data.push_row(x, std::strtod(row[label_col].c_str(), nullptr));
    }
    return data;
}

void write_dataset_csv(const std::string& path, const Dataset& data, const Schema& schema,
                       const std::string& meta_comment) {
    fs::create_directories(fs::path(path).parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write '" + path + "'");
    out << meta_comment << "\n";
    for (std::size_t f = 0; f < schema.dimension(); ++f)
        out << schema.feature(f).name << ',';
    out << "target\n";
    for (std::size_t r = 0; r < data.size(); ++r) {
        for (double v : data.row(r)) out << fmt17(v) << ',';
        out << fmt17(data.label(r)) << '\n';
    }
}

namespace {

std::string meta_comment(const RunConfig& cfg, const std::string& stage) {
    return "# tabattack config=" + cfg.config_hash() + " seed=" +
           std::to_string(cfg.stage_seed(stage)) + " stage=" + stage;
}

std::string schema_file(const RunConfig& cfg) { return cfg.out_dir + "/processed_schema.json"; }

Schema load_processed_schema(const RunConfig& cfg) {
    return Schema::parse(read_json(schema_file(cfg)));
}

}  // namespace

void stage_synth(const RunConfig& cfg) {
    SynthSpec spec = cfg.synth;
    if (spec.features.empty())
        spec.features = SynthSpec::reference(spec.task, spec.seed).features;
    spec.seed = cfg.stage_seed("synth");
    const SynthData data = synth_generate(spec);
    fs::create_directories(cfg.out_dir);
    write_csv(data.table, cfg.out_dir + "/data.csv");
    write_json_artifact(cfg.out_dir + "/schema.json", data.schema_manifest, cfg, "synth");
}

void stage_preprocess(const RunConfig& cfg) {
    const std::string data_path =
        cfg.do_synth ? cfg.out_dir + "/data.csv" : cfg.data_csv;
    const std::string schema_path =
        cfg.do_synth ? cfg.out_dir + "/schema.json" : cfg.schema_path;
    if (!fs::exists(data_path)) throw std::runtime_error("missing data csv: " + data_path);
    if (!fs::exists(schema_path))
        throw std::runtime_error("missing schema manifest: " + schema_path);

    const Schema schema = Schema::parse(read_json(schema_path));
    const RawTable raw = read_csv(data_path);

    PreprocessConfig pc = cfg.preprocess;
    pc.seed = cfg.stage_seed("preprocess");
    const Preprocessor prep = Preprocessor::fit(raw, schema, pc);
    const Dataset data = prep.transform(raw);

    SplitSpec sp = cfg.split;
    sp.seed = cfg.stage_seed("split");
    const SplitResult parts = split(data, prep.processed_schema(), sp);

    const std::string meta = meta_comment(cfg, "preprocess");
    write_json_artifact(cfg.out_dir + "/preprocessor.json", prep.to_json(), cfg, "preprocess");
    write_json_artifact(schema_file(cfg), prep.processed_schema().to_json(), cfg, "preprocess");
    write_dataset_csv(cfg.out_dir + "/train.csv", data.subset(parts.train),
                      prep.processed_schema(), meta);
    write_dataset_csv(cfg.out_dir + "/validation.csv", data.subset(parts.validation),
                      prep.processed_schema(), meta);
    write_dataset_csv(cfg.out_dir + "/attack_set.csv", data.subset(parts.attack_set),
                      prep.processed_schema(), meta);

    const Dataset train = data.subset(parts.train);
    // Supports cover the full dataset: attacked samples keep their immutable
    // coordinates verbatim, so those values must be in-support by construction.
    const Supports supports = Supports::fit(data, prep.processed_schema(), &prep);
    write_json_artifact(cfg.out_dir + "/supports.json", supports.to_json(), cfg, "preprocess");
    const ConsistencyEstimator estimator =
        ConsistencyEstimator::fit(train, prep.processed_schema(), cfg.consistency);
    write_json_artifact(cfg.out_dir + "/estimator.json", estimator.to_json(), cfg,
                        "preprocess");
}

void stage_train_embedding(const RunConfig& cfg) {
    const Schema schema = load_processed_schema(cfg);
    const Dataset train = read_dataset_csv(cfg.out_dir + "/train.csv", schema);
    TripletConfig tc = cfg.triplet;
    tc.seed = cfg.stage_seed("train-embedding");
    const EmbeddingModel model = train_embedding(train, schema, tc, cfg.embedding_dim);
    write_json_artifact(cfg.out_dir + "/embedding.json", model.to_json(), cfg,
                        "train-embedding");
}

void stage_train_surrogate(const RunConfig& cfg) {
    const Schema schema = load_processed_schema(cfg);
    const Dataset train = read_dataset_csv(cfg.out_dir + "/train.csv", schema);
    const Dataset validation = read_dataset_csv(cfg.out_dir + "/validation.csv", schema);
    const EmbeddingModel embedding =
        EmbeddingModel::from_json(read_json(cfg.out_dir + "/embedding.json"));

    SolverConfig sc = cfg.solver;
    sc.seed = cfg.stage_seed("train-surrogate");
    SurrogateModel surrogate;
    surrogate.task = schema.labels().task;
    surrogate.embedding = embedding;
    surrogate.solver = train_solver(embedding, train, &validation, surrogate.task, sc);
    write_json_artifact(cfg.out_dir + "/surrogate.json", surrogate.to_json(), cfg,
                        "train-surrogate");

    // Table-style diagnostics.
    auto metric = [&](const Dataset& d) {
        std::vector<double> scores(d.size());
        for (std::size_t i = 0; i < d.size(); ++i) scores[i] = surrogate.predict_score(d.row(i));
        if (surrogate.task == Task::binary_classification)
            return auc_score(scores, d.labels());
        return mse_score(scores, d.labels());
    };
    write_json_artifact(cfg.out_dir + "/surrogate_metrics.json",
                        {{"metric", surrogate.task == Task::binary_classification ? "auc"
                                                                                  : "mse"},
                         {"train", metric(train)},
                         {"validation", metric(validation)}},
                        cfg, "train-surrogate");
}

void stage_train_targets(const RunConfig& cfg) {
    const Schema schema = load_processed_schema(cfg);
    const Dataset train = read_dataset_csv(cfg.out_dir + "/train.csv", schema);
    const Dataset validation = read_dataset_csv(cfg.out_dir + "/validation.csv", schema);
    nlohmann::json metrics = nlohmann::json::array();
    for (TreeKind kind : cfg.targets) {
        const std::uint64_t seed = cfg.stage_seed("train-targets:" + tree_kind_name(kind));
        const TreeModel model = train_tree_model(kind, train, schema, cfg.trees, seed);
        write_json_artifact(cfg.out_dir + "/target_" + tree_kind_name(kind) + ".json",
                            model.to_json(), cfg, "train-targets");
        metrics.push_back({{"model", tree_kind_name(kind)},
                           {"train", evaluate(model, train)},
                           {"validation", evaluate(model, validation)}});
    }
    write_json_artifact(cfg.out_dir + "/target_metrics.json", {{"targets", metrics}}, cfg,
                        "train-targets");
}

AttackArtifacts run_attack_pass(const SurrogateModel& surrogate, const TreeModel* target,
                                const Dataset& attack_set, const AttackConfig& cfg,
                                const Supports& supports, const Schema& schema,
                                const ConsistencyEstimator& estimator) {
    AttackArtifacts out;
    out.results.resize(attack_set.size());
    out.validity.resize(attack_set.size());
    // Attacks are independent per sample; indexed writes keep any schedule
    // deterministic.
#pragma omp parallel for schedule(dynamic) num_threads(max_threads())
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(attack_set.size()); ++i) {
        const auto idx = static_cast<std::size_t>(i);
        const auto x = attack_set.row(idx);
        const double y = attack_set.label(idx);
        AttackResult r =
            target ? craft_adjusted(surrogate, *target, x, y, cfg, supports, schema)
                   : craft(surrogate, x, y, cfg, supports, schema);
        out.validity[idx] = validity_check(x, r.x_star, y, estimator, supports, schema);
        r.validity = out.validity[idx];
        out.results[idx] = std::move(r);
    }
    return out;
}

void write_results_csv(const std::string& dir, const AttackArtifacts& artifacts,
                       const Schema& schema, const std::string& meta, bool write_traces) {
    fs::create_directories(dir);
    std::ofstream out(dir + "/results.csv", std::ios::binary);
    out << meta << "\n";
    out << "index,label,succeeded,aborted,iterations,selected,l0_categorical,l0_numeric,"
           "l0_total,l1_numeric,feasible,support_violations,consistency_score,epsilon,"
           "consistent,valid\n";
    std::ofstream xs(dir + "/x_star.csv", std::ios::binary);
    std::ofstream xo(dir + "/x.csv", std::ios::binary);
    for (auto* f : {&xs, &xo}) {
        *f << meta << "\n";
        for (std::size_t i = 0; i < schema.dimension(); ++i) {
            if (i) *f << ',';
            *f << schema.feature(i).name;
        }
        *f << "\n";
    }
    for (std::size_t i = 0; i < artifacts.results.size(); ++i) {
        const AttackResult& r = artifacts.results[i];
        const ValidityReport& v = artifacts.validity[i];
        std::vector<double> x(r.x_star.size());
        for (std::size_t k = 0; k < x.size(); ++k) x[k] = r.x_star[k] - r.delta[k];
        const auto m = perturbation_metrics(x, r.x_star, schema);
        out << i << ',' << fmt17(r.label) << ',' << (r.succeeded ? 1 : 0) << ','
            << (r.aborted ? 1 : 0) << ',' << r.iterations << ',';
        for (std::size_t k = 0; k < r.selected.size(); ++k) {
            if (k) out << ';';
            out << r.selected[k];
        }
        out << ',' << m.l0_categorical << ',' << m.l0_numeric << ',' << m.l0_total << ','
            << fmt17(m.l1_numeric) << ',' << (v.feasible ? 1 : 0) << ','
            << v.support_violations.size() << ',' << fmt17(v.consistency_score) << ','
            << fmt17(v.epsilon) << ',' << (v.consistent ? 1 : 0) << ',' << (v.valid ? 1 : 0)
            << '\n';
        for (std::size_t k = 0; k < x.size(); ++k) {
            if (k) {
                xs << ',';
                xo << ',';
            }
            xs << fmt17(r.x_star[k]);
            xo << fmt17(x[k]);
        }
        xs << '\n';
        xo << '\n';
        if (write_traces) {
            nlohmann::json jt = nlohmann::json::array();
            for (const auto& t : r.trace)
                jt.push_back({{"feature", t.selected_feature}, {"objective", t.objective}});
            write_text(dir + "/trace_" + std::to_string(i) + ".json", jt.dump(2) + "\n");
        }
    }
}

AttackArtifacts read_results_csv(const std::string& dir, const Schema& schema) {
    const RawTable res = read_csv(dir + "/results.csv");
    const RawTable xs = read_csv(dir + "/x_star.csv");
    const RawTable xo = read_csv(dir + "/x.csv");
    if (res.n_rows() != xs.n_rows() || res.n_rows() != xo.n_rows())
        throw std::runtime_error("results artifacts disagree on row count");
    AttackArtifacts out;
    const std::size_t d = schema.dimension();
    for (std::size_t i = 0; i < res.n_rows(); ++i) {
        AttackResult r;
        r.label = std::strtod(res.rows[i][res.column_index("label")].c_str(), nullptr);
        r.succeeded = res.rows[i][res.column_index("succeeded")] == "1";
        r.aborted = res.rows[i][res.column_index("aborted")] == "1";
        r.iterations =
            std::strtoull(res.rows[i][res.column_index("iterations")].c_str(), nullptr, 10);
        for (const auto& s : split_list(res.rows[i][res.column_index("selected")], ';'))
            r.selected.push_back(std::strtoull(s.c_str(), nullptr, 10));
        r.x_star.resize(d);
        r.delta.resize(d);
        for (std::size_t k = 0; k < d; ++k) {
            r.x_star[k] = std::strtod(xs.rows[i][k].c_str(), nullptr);
            r.delta[k] = r.x_star[k] - std::strtod(xo.rows[i][k].c_str(), nullptr);
        }
        ValidityReport v;
        v.feasible = res.rows[i][res.column_index("feasible")] == "1";
        v.consistency_score =
            std::strtod(res.rows[i][res.column_index("consistency_score")].c_str(), nullptr);
        v.epsilon = std::strtod(res.rows[i][res.column_index("epsilon")].c_str(), nullptr);
        v.consistent = res.rows[i][res.column_index("consistent")] == "1";
        v.valid = res.rows[i][res.column_index("valid")] == "1";
        out.validity.push_back(v);
        out.results.push_back(std::move(r));
    }
    return out;
}

void stage_attack(const RunConfig& cfg) {
    const Schema schema = load_processed_schema(cfg);
    const Dataset attack_set = read_dataset_csv(cfg.out_dir + "/attack_set.csv", schema);
    const SurrogateModel surrogate =
        SurrogateModel::from_json(read_json(cfg.out_dir + "/surrogate.json"));
    const Supports supports = Supports::from_json(read_json(cfg.out_dir + "/supports.json"));
    const ConsistencyEstimator estimator =
        ConsistencyEstimator::from_json(read_json(cfg.out_dir + "/estimator.json"));

    const std::string meta = meta_comment(cfg, "attack");
    const auto base = run_attack_pass(surrogate, nullptr, attack_set, cfg.attack, supports,
                                      schema, estimator);
    write_results_csv(cfg.out_dir + "/results/base", base, schema, meta, cfg.write_traces);

    for (TreeKind kind : cfg.targets) {
        const TreeModel target = TreeModel::from_json(
            read_json(cfg.out_dir + "/target_" + tree_kind_name(kind) + ".json"));
        const auto adjusted = run_attack_pass(surrogate, &target, attack_set, cfg.attack,
                                              supports, schema, estimator);
        write_results_csv(cfg.out_dir + "/results/adjusted_" + tree_kind_name(kind), adjusted,
                          schema, meta, cfg.write_traces);
    }
}

void stage_report(const RunConfig& cfg) {
    const Schema schema = load_processed_schema(cfg);
    const std::string report_dir = cfg.out_dir + "/report";
    fs::create_directories(report_dir);
    const std::string meta = meta_comment(cfg, "report");

    const AttackArtifacts base = read_results_csv(cfg.out_dir + "/results/base", schema);
    const AttackSummary summary = attack_summary(base.results, schema);

    auto opt2 = [](const std::optional<double>& v) { return v ? fmt2(*v) : std::string(); };
    {
        std::ofstream out(report_dir + "/summary.csv", std::ios::binary);
        out << meta << "\n";
        out << "dataset,l0_cat,l0_cat_pct,l1_num,l0_num,l0_num_pct,l0_total,l0_total_pct,"
               "success_pct\n";
        out << "synthetic," << opt2(summary.avg_l0_categorical) << ','
            << opt2(summary.avg_pct_categorical) << ',' << opt2(summary.avg_l1_numeric) << ','
            << opt2(summary.avg_l0_numeric) << ',' << opt2(summary.avg_pct_numeric) << ','
            << opt2(summary.avg_l0_total) << ',' << opt2(summary.avg_pct_total) << ','
            << fmt2(summary.success_pct) << '\n';
    }
    {
        std::ofstream out(report_dir + "/transfer.csv", std::ios::binary);
        out << meta << "\n";
        out << "dataset,model,base_pct,adjusted_pct\n";
        for (TreeKind kind : cfg.targets) {
            const TreeModel target = TreeModel::from_json(
                read_json(cfg.out_dir + "/target_" + tree_kind_name(kind) + ".json"));
            const AttackArtifacts adjusted = read_results_csv(
                cfg.out_dir + "/results/adjusted_" + tree_kind_name(kind), schema);
            out << "synthetic," << tree_kind_name(kind) << ','
                << fmt2(transfer_rate(base.results, target, cfg.attack.tau)) << ','
                << fmt2(transfer_rate(adjusted.results, target, cfg.attack.tau)) << '\n';
        }
    }
    {
        nlohmann::json hist;
        for (const auto& [l0, count] : l0_histogram(base.results, schema))
            hist[std::to_string(l0)] = count;
        write_json_artifact(report_dir + "/l0_hist.json", hist, cfg, "report");
    }
    {
        std::ofstream out(report_dir + "/validity.csv", std::ios::binary);
        out << meta << "\n";
        out << "index,succeeded,feasible,support_violations,consistency_score,epsilon,"
               "consistent,valid\n";
        for (std::size_t i = 0; i < base.results.size(); ++i) {
            const ValidityReport& v = base.validity[i];
            out << i << ',' << (base.results[i].succeeded ? 1 : 0) << ','
                << (v.feasible ? 1 : 0) << ',' << v.support_violations.size() << ','
                << fmt17(v.consistency_score) << ',' << fmt17(v.epsilon) << ','
                << (v.consistent ? 1 : 0) << ',' << (v.valid ? 1 : 0) << '\n';
        }
    }
}

int run(const RunConfig& cfg) {
    if (cfg.jobs > 0) set_max_threads(cfg.jobs);
    try {
        if (cfg.do_synth) stage_synth(cfg);
        stage_preprocess(cfg);
        stage_train_embedding(cfg);
        stage_train_surrogate(cfg);
        stage_train_targets(cfg);
        stage_attack(cfg);
        stage_report(cfg);
    } catch (const std::exception& e) {
        nlohmann::json err{{"error", e.what()}};
        std::cerr << err.dump() << "\n";
        try {
            write_text(cfg.out_dir + "/error.json", err.dump(2) + "\n");
        } catch (...) {
        }
        return 1;
    }
    return 0;
}

}  // namespace tabattack
