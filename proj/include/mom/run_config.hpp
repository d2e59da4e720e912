#pragma once

// Line-oriented `key = value` run configuration. Unknown keys are hard
// errors, and referenced paths must exist when the file is parsed.

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <string>

#include "mom/model.hpp"
#include "mom/training.hpp"

namespace mom {

struct RunConfig {
    ModelConfig dims;
    std::string plan = "[1-1-4-1-1]";
    std::string mom = "K2H2S";
    std::string corpus;
    std::string out_dir = ".";
    uint64_t seed = 1;
    double valid_ratio = 0.01;
    TrainConfig train;          // shared knobs
    size_t steps_phase1 = 2000;
    size_t steps_phase2 = 1000;

    ChunkPlan parsed_plan() const { return parse_chunk_plan(plan); }
    MomConfig parsed_mom() const { return parse_mom_config(mom); }
};

namespace detail {

inline std::string trim(const std::string& s) {
    const auto begin = s.find_first_not_of(" \t\r\n");
    if (begin == std::string::npos) return "";
    const auto end = s.find_last_not_of(" \t\r\n");
    return s.substr(begin, end - begin + 1);
}

inline bool file_exists(const std::string& path) {
    std::ifstream f(path);
    return f.good();
}

}  // namespace detail

inline RunConfig parse_run_config(std::istream& in, const std::string& origin = "<config>") {
    RunConfig cfg;
    static const std::set<std::string> known = {
        "d",        "heads",        "d_ff",          "max_seq",      "vocab",
        "plan",     "mom",          "corpus",        "out_dir",      "seed",
        "peak_lr",  "warmup_ratio", "steps_phase1",  "steps_phase2", "batch_size",
        "seq_len",  "grad_clip",    "weight_decay",  "eval_interval", "eval_batches",
        "checkpoint_interval",      "valid_ratio"};
    std::string line;
    size_t line_no = 0;
    bool saw_corpus = false;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string text = detail::trim(line);
        if (text.empty()) continue;
        const auto eq = text.find('=');
        if (eq == std::string::npos)
            throw ConfigError(origin + ":" + std::to_string(line_no) +
                              ": expected 'key = value'");
        const std::string key = detail::trim(text.substr(0, eq));
        const std::string value = detail::trim(text.substr(eq + 1));
        if (!known.count(key))
            throw ConfigError(origin + ":" + std::to_string(line_no) + ": unknown key '" +
                              key + "'");
        if (value.empty())
            throw ConfigError(origin + ":" + std::to_string(line_no) + ": empty value for '" +
                              key + "'");
        auto as_u64 = [&] { return std::stoull(value); };
        auto as_f64 = [&] { return std::stod(value); };
        try {
            if (key == "d") cfg.dims.d = as_u64();
            else if (key == "heads") cfg.dims.heads = as_u64();
            else if (key == "d_ff") cfg.dims.d_ff = as_u64();
            else if (key == "max_seq") cfg.dims.max_seq = as_u64();
            else if (key == "vocab") cfg.dims.vocab = as_u64();
            else if (key == "plan") cfg.plan = value;
            else if (key == "mom") cfg.mom = value;
            else if (key == "corpus") { cfg.corpus = value; saw_corpus = true; }
            else if (key == "out_dir") cfg.out_dir = value;
            else if (key == "seed") { cfg.seed = as_u64(); cfg.train.seed = cfg.seed; }
            else if (key == "peak_lr") cfg.train.peak_lr = as_f64();
            else if (key == "warmup_ratio") cfg.train.warmup_ratio = as_f64();
            else if (key == "steps_phase1") cfg.steps_phase1 = as_u64();
            else if (key == "steps_phase2") cfg.steps_phase2 = as_u64();
            else if (key == "batch_size") cfg.train.batch_size = as_u64();
            else if (key == "seq_len") cfg.train.seq_len = as_u64();
            else if (key == "grad_clip") cfg.train.grad_clip = as_f64();
            else if (key == "weight_decay") cfg.train.weight_decay = as_f64();
            else if (key == "eval_interval") cfg.train.eval_interval = as_u64();
            else if (key == "eval_batches") cfg.train.eval_batches = as_u64();
            else if (key == "checkpoint_interval") cfg.train.checkpoint_interval = as_u64();
            else if (key == "valid_ratio") cfg.valid_ratio = as_f64();
        } catch (const std::invalid_argument&) {
            throw ConfigError(origin + ":" + std::to_string(line_no) + ": bad value '" +
                              value + "' for '" + key + "'");
        } catch (const std::out_of_range&) {
            throw ConfigError(origin + ":" + std::to_string(line_no) + ": value '" + value +
                              "' out of range for '" + key + "'");
        }
    }
    if (!saw_corpus) throw ConfigError(origin + ": missing required key 'corpus'");

    // Validate derived structure early so the CLI can fail before training.
    cfg.dims.validate();
    parse_chunk_plan(cfg.plan);
    parse_mom_config(cfg.mom);
    if (!detail::file_exists(cfg.corpus))
        throw ConfigError(origin + ": corpus path does not exist: " + cfg.corpus);
    return cfg;
}

inline RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    return parse_run_config(in, path);
}

}  // namespace mom
