#include "steerlab/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <sstream>

#include "steerlab/errors.hpp"
#include "steerlab/util.hpp"

namespace steerlab {

namespace fs = std::filesystem;

namespace {

const json& default_values() {
    static const json defs = {
        {"seed", 0},
        {"paths.workdir", "runs/default"},
        {"model.vocab_size", 96},
        {"model.d_model", 32},
        {"model.n_layers", 2},
        {"model.n_heads", 2},
        {"model.d_mlp", 64},
        {"model.ctx_len", 32},
        {"model.seed", nullptr},
        {"data.n_concepts", 4},
        {"data.concept_index", 0},
        {"data.n_train", 24},
        {"data.n_test", 16},
        {"data.answer_len_min", 4},
        {"data.answer_len_max", 7},
        {"data.corpus_sequences", 1200},
        {"data.neutral_fraction", 0.15},
        {"data.seed", nullptr},
        {"base.steps", 9000},
        {"base.lr", 0.003},
        {"base.batch", 8},
        {"base.seed", nullptr},
        {"train.objective", "split"},
        {"train.form", "vector"},
        {"train.lora_rank", 4},
        {"train.site_layer", 1},
        {"train.site_kind", "mlp_down"},
        {"train.lr", 0.1},
        {"train.steps", 250},
        {"train.batch", 8},
        {"train.m_train", 1.0},
        {"train.length_normalize", false},
        {"train.adam", true},
        {"train.seed", nullptr},
        {"split.lambda_p", 1.0},
        {"split.lambda_n", 1.0},
        {"split.gamma", 4.0},
        {"split.theta", 2.0},
        {"sweep.extent", 8.0},
        {"sweep.points", 33},
        {"measure.length_normalize", false},
        {"measure.answer_positions_only", false},
        {"fit.seed", nullptr},
        {"fit.max_iters", 900},
        {"judge.enabled", false},
        {"judge.endpoint", ""},
        {"judge.model", "gpt-4.1-mini"},
        {"judge.api_key_env", "STEERLAB_JUDGE_KEY"},
        {"judge.max_attempts", 3},
        {"judge.m", 1.0},
        {"judge.max_new_tokens", 8},
        {"judge.n_items", 8},
    };
    return defs;
}

void require_artifact(const fs::path& p, const std::string& producer) {
    if (!fs::exists(p))
        throw missing_artifact_error(p.string() + " (run " + producer + " first)");
}

ModelConfig model_config(const RunConfig& rc) {
    ModelConfig mc;
    mc.vocab_size = rc.sz("model.vocab_size");
    mc.d_model = rc.sz("model.d_model");
    mc.n_layers = rc.sz("model.n_layers");
    mc.n_heads = rc.sz("model.n_heads");
    mc.d_mlp = rc.sz("model.d_mlp");
    mc.ctx_len = rc.sz("model.ctx_len");
    mc.seed = rc.stage_seed("model");
    mc.validate();
    return mc;
}

DatasetConfig dataset_config(const RunConfig& rc) {
    const ModelConfig mc = model_config(rc);
    DatasetConfig dc;
    dc.vocab_size = mc.vocab_size;  // token ids are shared with the model
    dc.concepts = default_concepts(dc.vocab_size, rc.sz("data.n_concepts"));
    dc.n_train = rc.sz("data.n_train");
    dc.n_test = rc.sz("data.n_test");
    dc.answer_len_min = rc.sz("data.answer_len_min");
    dc.answer_len_max = rc.sz("data.answer_len_max");
    dc.corpus_sequences = rc.sz("data.corpus_sequences");
    dc.neutral_fraction = rc.num("data.neutral_fraction");
    dc.seed = rc.stage_seed("data");
    dc.validate();

    size_t max_query = 0;
    for (const ConceptSpec& cspec : dc.concepts)
        for (const TemplateSpec& t : cspec.templates) max_query = std::max(max_query, t.query.size());
    const size_t longest = 2 + max_query + dc.answer_len_max;  // BOS + query + SEP + answer
    if (longest > mc.ctx_len)
        throw config_error("longest dataset sequence (" + std::to_string(longest) +
                           " tokens) exceeds model.ctx_len " + std::to_string(mc.ctx_len));
    return dc;
}

SiteId train_site(const RunConfig& rc) {
    SiteId site;
    site.layer = rc.sz("train.site_layer");
    site.kind = site_kind_from_name(rc.str("train.site_kind"));
    return site;
}

MeasureConfig measure_config(const RunConfig& rc) {
    MeasureConfig mcfg;
    mcfg.length_normalize = rc.flag("measure.length_normalize");
    mcfg.answer_positions_only = rc.flag("measure.answer_positions_only");
    return mcfg;
}

std::vector<double> sweep_grid(const RunConfig& rc) {
    return symmetric_grid(rc.num("sweep.extent"), rc.sz("sweep.points"));
}

// The objective/form tokens naming this run's intervention artifacts.
std::pair<std::string, std::string> method_tokens(const RunConfig& rc) {
    const std::string obj = rc.str("train.objective");
    if (obj != "sft" && obj != "split" && obj != "reps" && obj != "diffmean")
        throw config_error("train.objective must be one of sft|split|reps|diffmean, got: " + obj);
    const std::string form = rc.str("train.form");
    form_from_name(form);  // validates
    return {obj, form};
}

void save_corpus(const fs::path& path, const std::vector<std::vector<size_t>>& corpus) {
    std::string out;
    for (const std::vector<size_t>& seq : corpus) {
        out += json{{"tokens", seq}}.dump();
        out += '\n';
    }
    atomic_write_file(path, out);
}

std::vector<std::vector<size_t>> load_corpus(const fs::path& path) {
    const std::string text = read_file(path);
    std::vector<std::vector<size_t>> corpus;
    size_t start = 0, line_no = 0;
    while (start < text.size()) {
        size_t end = text.find('\n', start);
        if (end == std::string::npos) end = text.size();
        ++line_no;
        const std::string line = text.substr(start, end - start);
        start = end + 1;
        if (line.empty()) continue;
        json j = json::parse(line, nullptr, /*allow_exceptions=*/false);
        if (j.is_discarded() || !j.contains("tokens"))
            throw parse_error(path.string() + ": line " + std::to_string(line_no) +
                              ": expected {\"tokens\": [...]}");
        corpus.push_back(j.at("tokens").get<std::vector<size_t>>());
    }
    return corpus;
}

std::string fixed4(double v) {
    if (!std::isfinite(v)) return "NA";
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.4f", v);
    return buf;
}

std::string sweep_provenance_line(const RunConfig& rc) {
    return "# config_hash=" + rc.config_hash() + " seed=" + std::to_string(rc.u64("seed")) + "\n";
}

// Extracts the config_hash recorded in a sweep CSV's comment line.
std::string sweep_hash_of(const std::string& csv_text) {
    const std::string tag = "# config_hash=";
    if (csv_text.rfind(tag, 0) != 0) return "";
    const size_t from = tag.size();
    const size_t to = csv_text.find(' ', from);
    return csv_text.substr(from, to == std::string::npos ? std::string::npos : to - from);
}

}  // namespace

RunConfig RunConfig::defaults() {
    RunConfig rc;
    rc.values_ = default_values();
    return rc;
}

RunConfig RunConfig::from_json(const json& file_values,
                               const std::vector<std::string>& overrides) {
    RunConfig rc = defaults();
    const json& defs = default_values();
    auto apply = [&](const std::string& key, const json& val, const char* origin) {
        if (!defs.contains(key))
            throw config_error(std::string("unknown config key ") + key + " (" + origin + ")");
        const json& def = defs.at(key);
        const bool ok = def.is_null()      ? val.is_number_integer() || val.is_number_unsigned()
                        : def.is_boolean() ? val.is_boolean()
                        : def.is_string()  ? val.is_string()
                        : def.is_number()  ? val.is_number()
                                           : false;
        if (!ok)
            throw config_error(std::string("config key ") + key + " has the wrong type (" +
                               origin + ")");
        rc.values_[key] = val;
    };
    if (!file_values.is_object()) throw config_error("config must be a JSON object");
    for (const auto& [k, v] : file_values.items()) {
        if (v.is_object() || v.is_array())
            throw config_error("config uses flat dotted keys; key " + k + " is nested");
        apply(k, v, "config file");
    }
    for (const std::string& ov : overrides) {
        const size_t eq = ov.find('=');
        if (eq == std::string::npos || eq == 0)
            throw config_error("--set expects key=value, got: " + ov);
        const std::string key = ov.substr(0, eq);
        const std::string raw = ov.substr(eq + 1);
        json v = json::parse(raw, nullptr, /*allow_exceptions=*/false);
        if (v.is_discarded() || v.is_object() || v.is_array()) v = raw;
        apply(key, v, "--set");
    }
    return rc;
}

RunConfig RunConfig::load(const std::string& path, const std::vector<std::string>& overrides) {
    if (!fs::exists(path)) throw config_error("config file not found: " + path);
    return from_json(parse_json_file(path), overrides);
}

double RunConfig::num(const std::string& key) const {
    const json& v = values_.at(key);
    if (!v.is_number()) throw config_error("config key " + key + " is not a number");
    return v.get<double>();
}

uint64_t RunConfig::u64(const std::string& key) const {
    const json& v = values_.at(key);
    if (!v.is_number_integer() && !v.is_number_unsigned())
        throw config_error("config key " + key + " is not an integer");
    return v.get<uint64_t>();
}

size_t RunConfig::sz(const std::string& key) const { return static_cast<size_t>(u64(key)); }

bool RunConfig::flag(const std::string& key) const {
    const json& v = values_.at(key);
    if (!v.is_boolean()) throw config_error("config key " + key + " is not a boolean");
    return v.get<bool>();
}

std::string RunConfig::str(const std::string& key) const {
    const json& v = values_.at(key);
    if (!v.is_string()) throw config_error("config key " + key + " is not a string");
    return v.get<std::string>();
}

std::string RunConfig::config_hash() const {
    const std::string canon = values_.dump();
    return to_hex(fnv1a64(canon));
}

uint64_t RunConfig::stage_seed(const std::string& stage) const {
    const std::string key = stage + ".seed";
    if (values_.contains(key) && !values_.at(key).is_null())
        return values_.at(key).get<uint64_t>();
    const uint64_t master = u64("seed");
    return fnv1a64(stage.data(), stage.size(), master ^ 0xcbf29ce484222325ULL);
}

fs::path RunConfig::workdir() const { return fs::path(str("paths.workdir")); }

std::string run_gen_data(const RunConfig& rc) {
    const ArtifactPaths ap(rc.workdir());
    fs::create_directories(ap.workdir);
    const DatasetConfig dc = dataset_config(rc);
    const size_t ci = rc.sz("data.concept_index");
    if (ci >= dc.concepts.size())
        throw config_error("data.concept_index " + std::to_string(ci) + " out of range (have " +
                           std::to_string(dc.concepts.size()) + " concepts)");

    const std::vector<std::vector<size_t>> corpus = gen_corpus(dc);
    const auto [train, test] = gen_polarity_set(dc, dc.concepts[ci]);
    const std::vector<std::string> table = detok_table(dc.vocab_size);

    save_corpus(ap.corpus(), corpus);
    save_jsonl(ap.train_pairs().string(), train, &table);
    save_jsonl(ap.eval_pairs().string(), test, &table);

    std::vector<std::pair<std::string, std::string>> checksums;
    for (const fs::path& p : {ap.corpus(), ap.train_pairs(), ap.eval_pairs()})
        checksums.emplace_back(p.filename().string(), to_hex(file_checksum(p)));
    json manifest = dataset_manifest(dc, checksums);
    manifest["config_hash"] = rc.config_hash();
    atomic_write_file(ap.manifest(), manifest.dump(2) + "\n");

    std::ostringstream os;
    os << "gen-data: " << corpus.size() << " corpus sequences, " << train.size()
       << " train pairs, " << test.size() << " eval pairs (concept "
       << dc.concepts[ci].id << ") -> " << ap.workdir.string();
    return os.str();
}

std::string run_train_base(const RunConfig& rc) {
    const ArtifactPaths ap(rc.workdir());
    require_artifact(ap.corpus(), "gen-data");
    const std::vector<std::vector<size_t>> corpus = load_corpus(ap.corpus());
    const ModelConfig mc = model_config(rc);
    const uint64_t seed = rc.stage_seed("base");
    const BaseTrainResult result = train_base(init_model(mc), corpus, rc.sz("base.steps"),
                                              rc.num("base.lr"), rc.sz("base.batch"), seed);
    save_model(result.model, ap.base_model().string());
    const json meta = {{"format", "steerlab-base-meta"},
                       {"config_hash", rc.config_hash()},
                       {"seed", seed},
                       {"steps", result.steps_run},
                       {"final_loss", result.final_loss},
                       {"model_checksum", to_hex(result.model.checksum())}};
    atomic_write_file(ap.base_meta(), meta.dump(2) + "\n");
    std::ostringstream os;
    os << "train-base: " << result.steps_run << " steps, final loss "
       << fixed4(result.final_loss) << " -> " << ap.base_model().string();
    return os.str();
}

std::string run_steer_train(const RunConfig& rc) {
    const ArtifactPaths ap(rc.workdir());
    require_artifact(ap.base_model(), "train-base");
    require_artifact(ap.train_pairs(), "gen-data");
    const auto [obj, form_str] = method_tokens(rc);
    const LanguageModel model = load_model(ap.base_model().string());
    const std::vector<PolarityExample> pairs = load_jsonl(ap.train_pairs().string());
    const SiteId site = train_site(rc);

    InterventionCheckpoint ckpt;
    ckpt.site = site;
    ckpt.meta = {{"config_hash", rc.config_hash()},
                 {"objective", obj},
                 {"form", form_str},
                 {"site_layer", site.layer},
                 {"site_kind", site_kind_name(site.kind)},
                 {"m_train", rc.num("train.m_train")}};
    std::string detail;
    if (obj == "diffmean") {
        if (form_str != "vector")
            throw config_error("diffmean produces a steering vector; set train.form=vector");
        if (site.kind != SiteKind::residual)
            throw config_error("diffmean captures the residual stream; set "
                               "train.site_kind=residual");
        const auto [pos, neg] = collect_answer_activations(model, site, pairs);
        ckpt.iv = diffmean_vector(pos, neg);
        ckpt.meta["seed"] = 0;
        ckpt.meta["n_examples"] = pairs.size();
        detail = "train-free from " + std::to_string(pairs.size()) + " pairs";
    } else {
        TrainConfig tc;
        tc.objective = objective_from_name(obj);
        tc.form = form_from_name(form_str);
        tc.lora_rank = rc.sz("train.lora_rank");
        tc.site = site;
        tc.lr = rc.num("train.lr");
        tc.steps = rc.sz("train.steps");
        tc.batch = rc.sz("train.batch");
        tc.seed = rc.stage_seed("train");
        tc.m_train = rc.num("train.m_train");
        tc.length_normalize = rc.flag("train.length_normalize");
        tc.adam = rc.flag("train.adam");
        tc.split.lambda_p = rc.num("split.lambda_p");
        tc.split.lambda_n = rc.num("split.lambda_n");
        tc.split.gamma = rc.num("split.gamma");
        tc.split.theta = rc.num("split.theta");
        const TrainResult result = train_intervention(model, tc, pairs);
        save_train_log(result.log, ap.train_log(obj, form_str).string());
        ckpt.iv = result.iv;
        ckpt.meta["seed"] = tc.seed;
        ckpt.meta["steps"] = result.steps_run;
        ckpt.meta["final_loss"] = result.final_loss;
        detail = std::to_string(result.steps_run) + " steps, final loss " +
                 fixed4(result.final_loss);
    }
    save_intervention(ckpt, ap.intervention(obj, form_str).string());
    std::ostringstream os;
    os << "steer-train[" << obj << "/" << form_str << "]: " << detail << " -> "
       << ap.intervention(obj, form_str).string();
    return os.str();
}

std::string run_sweep(const RunConfig& rc) {
    const ArtifactPaths ap(rc.workdir());
    const auto [obj, form_str] = method_tokens(rc);
    require_artifact(ap.base_model(), "train-base");
    require_artifact(ap.intervention(obj, form_str), "steer-train");
    require_artifact(ap.eval_pairs(), "gen-data");
    const LanguageModel model = load_model(ap.base_model().string());
    const InterventionCheckpoint ckpt = load_intervention(ap.intervention(obj, form_str).string());
    const std::vector<PolarityExample> pairs = load_jsonl(ap.eval_pairs().string());

    const SweepCurve curve =
        sweep(model, ckpt.site, ckpt.iv, pairs, sweep_grid(rc), measure_config(rc));
    atomic_write_file(ap.sweep_csv(obj, form_str),
                      sweep_provenance_line(rc) + sweep_to_csv(curve));
    save_sweep_raw_jsonl(curve, ap.sweep_raw(obj, form_str).string());

    const size_t i0 = static_cast<size_t>(
        std::find(curve.m_grid.begin(), curve.m_grid.end(), 0.0) - curve.m_grid.begin());
    std::ostringstream os;
    os << "sweep[" << obj << "/" << form_str << "]: " << curve.m_grid.size() << " points x "
       << pairs.size() << " pairs, pref(0)=" << fixed4(curve.points[i0].pref_mean)
       << " util(0)=" << fixed4(curve.points[i0].util_mean) << " -> "
       << ap.sweep_csv(obj, form_str).string();
    return os.str();
}

std::string run_fit(const RunConfig& rc) {
    const ArtifactPaths ap(rc.workdir());
    const auto [obj, form_str] = method_tokens(rc);
    require_artifact(ap.sweep_csv(obj, form_str), "sweep");
    const SweepCurve curve = load_sweep_csv(ap.sweep_csv(obj, form_str).string());

    FitOptions fo;
    fo.seed = rc.stage_seed("fit");
    fo.max_iters = static_cast<int>(rc.sz("fit.max_iters"));
    const auto [pf, prep] = fit_pref(curve, fo);
    const auto [uf, urep] = fit_util(curve, fo);

    json jp = fit_to_json(pf, prep);
    jp["config_hash"] = rc.config_hash();
    atomic_write_file(ap.fit_json(obj, form_str, "pref"), jp.dump(2) + "\n");
    json ju = fit_to_json(uf, urep);
    ju["config_hash"] = rc.config_hash();
    atomic_write_file(ap.fit_json(obj, form_str, "util"), ju.dump(2) + "\n");

    std::ostringstream os;
    os << "fit[" << obj << "/" << form_str << "]: pref r2=" << fixed4(prep.r2)
       << " util r2=" << fixed4(urep.r2) << " -> " << ap.fit_json(obj, form_str, "pref").string()
       << ", " << ap.fit_json(obj, form_str, "util").string();
    return os.str();
}

std::string run_transfer(const RunConfig& rc) {
    const ArtifactPaths ap(rc.workdir());
    const auto [obj, form_str] = method_tokens(rc);
    require_artifact(ap.fit_json(obj, form_str, "pref"), "fit");
    require_artifact(ap.fit_json(obj, form_str, "util"), "fit");
    require_artifact(ap.base_model(), "train-base");
    require_artifact(ap.intervention(obj, form_str), "steer-train");
    require_artifact(ap.train_pairs(), "gen-data");

    const LanguageModel model = load_model(ap.base_model().string());
    const InterventionCheckpoint ckpt = load_intervention(ap.intervention(obj, form_str).string());
    const std::vector<PolarityExample> pairs = load_jsonl(ap.train_pairs().string());
    const std::vector<double> grid = sweep_grid(rc);
    const SweepCurve test_curve =
        sweep(model, ckpt.site, ckpt.iv, pairs, grid, measure_config(rc));

    auto [pf, prep] = pref_fit_from_json(parse_json_file(ap.fit_json(obj, form_str, "pref")));
    auto [uf, urep] = util_fit_from_json(parse_json_file(ap.fit_json(obj, form_str, "util")));
    // The fit artifact does not carry the fitted grid range; both sweeps use
    // the configured grid, so restore it from there.
    prep.m_lo = urep.m_lo = grid.front();
    prep.m_hi = urep.m_hi = grid.back();
    const double pref_r2 = transfer_eval(pf, prep, test_curve);
    const double util_r2 = transfer_eval(uf, urep, test_curve);

    const json out = {{"format", "steerlab-transfer"},
                      {"config_hash", rc.config_hash()},
                      {"seed", rc.u64("seed")},
                      {"objective", obj},
                      {"form", form_str},
                      {"pref_r2", pref_r2},
                      {"util_r2", util_r2},
                      {"n_points", grid.size()},
                      {"n_examples", pairs.size()}};
    atomic_write_file(ap.transfer_json(obj, form_str), out.dump(2) + "\n");
    std::ostringstream os;
    os << "transfer[" << obj << "/" << form_str << "]: pref r2=" << fixed4(pref_r2)
       << " util r2=" << fixed4(util_r2) << " -> " << ap.transfer_json(obj, form_str).string();
    return os.str();
}

std::optional<std::pair<double, double>> pref_at_util_drop(const SweepCurve& curve, double drop) {
    if (!(drop > 0.0)) throw argument_error("pref_at_util_drop: drop must be positive");
    const auto it = std::find(curve.m_grid.begin(), curve.m_grid.end(), 0.0);
    if (it == curve.m_grid.end()) throw argument_error("pref_at_util_drop: grid lacks m=0");
    const size_t i0 = static_cast<size_t>(it - curve.m_grid.begin());
    const double target = curve.points[i0].util_mean - drop;
    for (size_t i = i0; i + 1 < curve.points.size(); ++i) {
        const double u0 = curve.points[i].util_mean;
        const double u1 = curve.points[i + 1].util_mean;
        if (u0 > target && u1 <= target) {
            const double t = (u0 - target) / (u0 - u1);
            const double m =
                curve.m_grid[i] + t * (curve.m_grid[i + 1] - curve.m_grid[i]);
            const double pref = curve.points[i].pref_mean +
                                t * (curve.points[i + 1].pref_mean - curve.points[i].pref_mean);
            return std::make_pair(m, pref);
        }
    }
    return std::nullopt;
}

std::vector<size_t> greedy_generate(const LanguageModel& model, const std::vector<size_t>& query,
                                    const std::vector<Hook>& hooks, size_t max_new_tokens) {
    if (query.empty()) throw argument_error("greedy_generate: empty query");
    std::vector<size_t> toks = query;
    std::vector<size_t> out;
    while (out.size() < max_new_tokens && toks.size() < model.config.ctx_len) {
        const Tensor logits = forward_logits(model, toks, hooks);
        size_t best = 0;
        double best_v = -std::numeric_limits<double>::infinity();
        for (size_t j = 0; j < logits.cols; ++j) {
            const double v = logits.at(logits.rows - 1, j);
            if (v > best_v) {
                best_v = v;
                best = j;
            }
        }
        toks.push_back(best);
        out.push_back(best);
    }
    return out;
}

namespace {

struct MethodGroup {
    std::string obj, form;
    json fit_pref, fit_util;
    SweepCurve curve;
    std::optional<json> transfer;
    std::string hash;  // shared config hash of the group's artifacts
};

MethodGroup load_group(const ArtifactPaths& ap, const std::string& obj, const std::string& form) {
    MethodGroup g;
    g.obj = obj;
    g.form = form;
    require_artifact(ap.fit_json(obj, form, "util"), "fit");
    require_artifact(ap.sweep_csv(obj, form), "sweep");
    g.fit_pref = parse_json_file(ap.fit_json(obj, form, "pref"));
    g.fit_util = parse_json_file(ap.fit_json(obj, form, "util"));
    const std::string csv_text = read_file(ap.sweep_csv(obj, form));
    g.curve = sweep_from_csv(csv_text);

    g.hash = g.fit_pref.value("config_hash", "");
    const std::string util_hash = g.fit_util.value("config_hash", "");
    const std::string sweep_hash = sweep_hash_of(csv_text);
    if (g.hash.empty() || g.hash != util_hash || g.hash != sweep_hash)
        throw validation_error("artifact config hashes disagree for " + obj + "/" + form +
                               "; regenerate the pipeline from one config");
    if (fs::exists(ap.transfer_json(obj, form))) {
        g.transfer = parse_json_file(ap.transfer_json(obj, form));
        if (g.transfer->value("config_hash", "") != g.hash)
            throw validation_error("transfer artifact hash disagrees for " + obj + "/" + form);
    }
    return g;
}

}  // namespace

std::string run_report(const RunConfig& rc) {
    const ArtifactPaths ap(rc.workdir());
    if (!fs::exists(ap.workdir))
        throw missing_artifact_error(ap.workdir.string() + " (run the pipeline first)");

    // Discover fitted method/form groups from the fit artifacts present.
    std::vector<std::pair<std::string, std::string>> found;
    for (const auto& entry : fs::directory_iterator(ap.workdir)) {
        const std::string name = entry.path().filename().string();
        const std::string suffix = "-pref.json";
        if (name.rfind("fit-", 0) != 0 || name.size() <= 4 + suffix.size()) continue;
        if (name.compare(name.size() - suffix.size(), suffix.size(), suffix) != 0) continue;
        const std::string mid = name.substr(4, name.size() - 4 - suffix.size());
        const size_t dash = mid.find('-');
        if (dash == std::string::npos) continue;
        found.emplace_back(mid.substr(0, dash), mid.substr(dash + 1));
    }
    std::sort(found.begin(), found.end());
    if (found.empty())
        throw missing_artifact_error("no fit artifacts in " + ap.workdir.string() +
                                     " (run fit first)");

    std::vector<MethodGroup> groups;
    for (const auto& [obj, form] : found) groups.push_back(load_group(ap, obj, form));

    // Optional judge pass over greedy generations.
    std::map<std::string, double> judge_harmonic;  // key obj/form
    if (rc.flag("judge.enabled")) {
        require_artifact(ap.base_model(), "train-base");
        require_artifact(ap.eval_pairs(), "gen-data");
        const LanguageModel model = load_model(ap.base_model().string());
        const std::vector<PolarityExample> pairs = load_jsonl(ap.eval_pairs().string());
        const std::vector<std::string> table = detok_table(model.config.vocab_size);
        const size_t n_items = std::min(rc.sz("judge.n_items"), pairs.size());
        const std::string rubric =
            "Grade the completion of a steered toy language model on three axes, each an "
            "integer 0-2, and reply with exactly three integers separated by spaces in this "
            "order: concept score (does the completion express the steered concept), "
            "instruction score (does it stay in the task's phrase structure), fluency score "
            "(is it well-formed).";
        JudgeConfig jc;
        jc.endpoint = rc.str("judge.endpoint");
        jc.model = rc.str("judge.model");
        jc.api_key_env = rc.str("judge.api_key_env");
        jc.max_attempts = rc.sz("judge.max_attempts");
        for (const MethodGroup& g : groups) {
            const InterventionCheckpoint ckpt =
                load_intervention(ap.intervention(g.obj, g.form).string());
            Hook hook;
            hook.site = ckpt.site;
            hook.iv = &ckpt.iv;
            hook.scale = SteerScale(rc.num("judge.m"));
            std::vector<std::string> gens;
            for (size_t i = 0; i < n_items; ++i) {
                const std::vector<size_t> completion = greedy_generate(
                    model, pairs[i].query, {hook}, rc.sz("judge.max_new_tokens"));
                gens.push_back(detokenize(pairs[i].query, table) + " -> " +
                               detokenize(completion, table));
            }
            jc.audit_path = ap.judge_audit(g.obj, g.form).string();
            const std::vector<JudgeScore> scores = judge_generations(jc, gens, rubric);
            std::string lines;
            double sum = 0.0;
            size_t n_ok = 0;
            for (size_t i = 0; i < scores.size(); ++i) {
                const JudgeScore& s = scores[i];
                lines += json{{"item", i},
                              {"concept", s.concept_score},
                              {"instruction", s.instruction},
                              {"fluency", s.fluency},
                              {"harmonic", s.harmonic},
                              {"scoring_error", s.scoring_error},
                              {"raw", s.raw}}
                             .dump();
                lines += '\n';
                if (!s.scoring_error) {
                    sum += s.harmonic;
                    ++n_ok;
                }
            }
            atomic_write_file(ap.judge_scores(g.obj, g.form), lines);
            if (n_ok > 0) judge_harmonic[g.obj + "/" + g.form] = sum / static_cast<double>(n_ok);
        }
    }

    // method x form x metric rows, deterministic order.
    const double nan = std::numeric_limits<double>::quiet_NaN();
    std::vector<std::pair<std::string, double>> metric_rows;  // "obj,form,metric" -> value
    auto add = [&](const MethodGroup& g, const std::string& metric, double v) {
        metric_rows.emplace_back(g.obj + "," + g.form + "," + metric, v);
    };
    std::ostringstream md;
    md << "# steerlab report\n\n";
    md << "seed " << rc.u64("seed") << "\n\n";
    md << "| method | form | pref r2 | util r2 | pref(0) | pref peak | util(0) | util drop at "
          "extremes | pref at util-1 | transfer pref r2 | transfer util r2 | judge harmonic "
          "|\n";
    md << "|---|---|---|---|---|---|---|---|---|---|---|---|\n";
    for (const MethodGroup& g : groups) {
        const SweepCurve& c = g.curve;
        const size_t i0 = static_cast<size_t>(
            std::find(c.m_grid.begin(), c.m_grid.end(), 0.0) - c.m_grid.begin());
        const double pref0 = c.points[i0].pref_mean;
        const double util0 = c.points[i0].util_mean;
        double pref_peak = -std::numeric_limits<double>::infinity();
        for (const SweepPoint& p : c.points) pref_peak = std::max(pref_peak, p.pref_mean);
        const double util_ext =
            util0 - 0.5 * (c.points.front().util_mean + c.points.back().util_mean);
        const auto drop1 = pref_at_util_drop(c, 1.0);
        const double pref_r2 = g.fit_pref.value("r2", nan);
        const double util_r2 = g.fit_util.value("r2", nan);
        const double tp = g.transfer ? g.transfer->value("pref_r2", nan) : nan;
        const double tu = g.transfer ? g.transfer->value("util_r2", nan) : nan;
        const auto jh = judge_harmonic.find(g.obj + "/" + g.form);
        const double jh_v = jh == judge_harmonic.end() ? nan : jh->second;

        add(g, "pref_r2", pref_r2);
        add(g, "util_r2", util_r2);
        add(g, "pref_at_m0", pref0);
        add(g, "pref_peak", pref_peak);
        add(g, "util_at_m0", util0);
        add(g, "util_drop_extremes", util_ext);
        add(g, "pref_at_util_drop_1", drop1 ? drop1->second : nan);
        add(g, "m_at_util_drop_1", drop1 ? drop1->first : nan);
        add(g, "transfer_pref_r2", tp);
        add(g, "transfer_util_r2", tu);
        add(g, "judge_harmonic", jh_v);

        md << "| " << g.obj << " | " << g.form << " | " << fixed4(pref_r2) << " | "
           << fixed4(util_r2) << " | " << fixed4(pref0) << " | " << fixed4(pref_peak) << " | "
           << fixed4(util0) << " | " << fixed4(util_ext) << " | "
           << fixed4(drop1 ? drop1->second : nan) << " | " << fixed4(tp) << " | " << fixed4(tu)
           << " | " << fixed4(jh_v) << " |\n";
    }
    md << "\nartifact hashes: ";
    for (size_t i = 0; i < groups.size(); ++i)
        md << (i ? ", " : "") << groups[i].obj << "/" << groups[i].form << "="
           << groups[i].hash;
    md << "\n";

    std::string csv = "method,form,metric,value\n";
    for (const auto& [key, v] : metric_rows) {
        csv += key;
        csv += ',';
        csv += std::isfinite(v) ? format_double(v) : "NA";
        csv += '\n';
    }
    atomic_write_file(ap.report_md(), md.str());
    atomic_write_file(ap.report_csv(), csv);

    std::ostringstream os;
    os << "report: " << groups.size() << " method/form group" << (groups.size() == 1 ? "" : "s")
       << " -> " << ap.report_md().string();
    return os.str();
}

}  // namespace steerlab
