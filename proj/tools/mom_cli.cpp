// mom: train / profile / trace / analyze for router-assembled transformers.
// Exit codes: 0 ok, 1 usage, 2 configuration, 3 runtime failure.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "mom/analysis.hpp"
#include "mom/checkpoint.hpp"
#include "mom/corpus.hpp"
#include "mom/profiler.hpp"
#include "mom/run_config.hpp"
#include "mom/textgen.hpp"
#include "mom/trace_io.hpp"
#include "mom/training.hpp"

namespace {

using Model = mom::MomModel<float>;

struct TrainArgs {
    std::string config_path;
    int phase = 1;
    std::string init_from;
};

int run_train(const TrainArgs& args) {
    auto cfg = mom::load_run_config(args.config_path);
    std::filesystem::create_directories(cfg.out_dir);

    auto bytes = mom::corpus_load(cfg.corpus);
    auto split = mom::split_corpus(bytes, cfg.train.seq_len, cfg.seed, cfg.valid_ratio);

    mom::TrainConfig tc = cfg.train;
    tc.total_steps = args.phase == 1 ? cfg.steps_phase1 : cfg.steps_phase2;

    Model model;
    if (args.phase == 1) {
        const size_t layers = cfg.parsed_plan().source_layers();
        model = Model::init_vanilla(cfg.dims, layers, cfg.seed);
    } else {
        auto vanilla = mom::load_checkpoint<float>(args.init_from);
        if (vanilla.cfg.d != cfg.dims.d || vanilla.cfg.vocab != cfg.dims.vocab ||
            vanilla.cfg.max_seq != cfg.dims.max_seq || vanilla.cfg.d_ff != cfg.dims.d_ff ||
            vanilla.cfg.heads != cfg.dims.heads)
            throw mom::ConfigError("init checkpoint dims do not match the run config");
        model = mom::decompose_vanilla(vanilla, cfg.parsed_plan(), cfg.parsed_mom(),
                                       cfg.seed + 0x0F15E5ULL);
    }

    const std::string tag = "phase" + std::to_string(args.phase);
    const std::string metrics_path = cfg.out_dir + "/metrics_" + tag + ".log";
    std::ofstream metrics_out(metrics_path, std::ios::trunc);
    if (!metrics_out) throw std::runtime_error("cannot write " + metrics_path);

    auto checkpoint_path = [&](size_t step) {
        return cfg.out_dir + "/" + tag + "_step" + std::to_string(step) + ".ckpt";
    };
    auto on_checkpoint = [&](size_t step) {
        mom::save_checkpoint(checkpoint_path(step), model,
                             {{"phase", std::to_string(args.phase)},
                              {"step", std::to_string(step)},
                              {"seed", std::to_string(cfg.seed)}});
    };

    auto metrics = mom::train_phase(model, split, tc, args.phase, on_checkpoint);
    for (const auto& m : metrics) metrics_out << mom::format_metrics(m) << "\n";
    metrics_out.close();

    const std::string final_path = cfg.out_dir + "/" + tag + ".ckpt";
    mom::save_checkpoint(final_path, model,
                         {{"phase", std::to_string(args.phase)},
                          {"step", std::to_string(tc.total_steps)},
                          {"seed", std::to_string(cfg.seed)}});

    if (!metrics.empty() && metrics.back().val_loss) {
        const double val = *metrics.back().val_loss;
        std::printf("final val_loss %.6f (perplexity %.4f)\n", val, std::exp(val));
    }
    std::cout << "wrote " << metrics_path << " and " << final_path << "\n";
    return 0;
}

struct ProfileArgs {
    std::string dims = "gpt2-small";
    std::string plan;
    std::string mom = "K1H4";
    std::string baseline;
    std::string csv_path;
    size_t seq_len = 1024;
    std::string assume = "no_skip";
    double skip_rate = 0.0;
    size_t custom_d = 0, custom_heads = 0, custom_dff = 0, custom_vocab = 50257;
};

mom::CostReport profile_one(const ProfileArgs& args, const std::string& mom_str) {
    mom::ModelConfig cfg;
    std::string plan_str = args.plan;
    if (args.dims == "custom") {
        if (!args.custom_d || !args.custom_heads || !args.custom_dff)
            throw mom::ConfigError("custom dims need --d, --heads and --d-ff");
        cfg.d = args.custom_d;
        cfg.heads = args.custom_heads;
        cfg.d_ff = args.custom_dff;
        cfg.vocab = args.custom_vocab;
        cfg.max_seq = std::max<size_t>(args.seq_len, 1);
        if (plan_str.empty()) throw mom::ConfigError("custom dims need --plan");
    } else {
        auto preset = mom::ProfileDims::preset(args.dims);
        cfg = preset.cfg;
        if (plan_str.empty()) plan_str = preset.plan_str;
    }
    mom::SkipAssumption assume;
    if (args.assume == "no_skip") assume = mom::SkipAssumption::no_skip;
    else if (args.assume == "all_skip") assume = mom::SkipAssumption::all_skip;
    else if (args.assume == "expected") assume = mom::SkipAssumption::expected;
    else throw mom::ConfigError("unknown --assume '" + args.assume + "'");
    return mom::estimate_flops(cfg, mom::parse_chunk_plan(plan_str),
                               mom::parse_mom_config(mom_str), args.seq_len, assume,
                               args.skip_rate);
}

std::string pct_delta(double value, double base) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%+.1f%%", 100.0 * (value - base) / base);
    return buf;
}

int run_profile(const ProfileArgs& args) {
    auto report = profile_one(args, args.mom);
    std::optional<mom::CostReport> base;
    if (!args.baseline.empty()) base = profile_one(args, args.baseline);

    auto row = [&](const char* label, double value, double base_value, const char* unit) {
        std::printf("  %-16s %14.4g %s", label, value, unit);
        if (base) std::printf("   (%s vs %s)", pct_delta(value, base_value).c_str(),
                              args.baseline.c_str());
        std::printf("\n");
    };
    std::printf("config %s  dims %s  seq_len %zu  assume %s\n", args.mom.c_str(),
                args.dims.c_str(), args.seq_len, args.assume.c_str());
    row("params", double(report.param_count), base ? double(base->param_count) : 0, "");
    row("forward_flops", report.forward_flops, base ? base->forward_flops : 0, "");
    row("gru_flops", report.gru_flops, base ? base->gru_flops : 0, "(not in headline)");
    row("weight_bytes", double(report.weight_bytes), base ? double(base->weight_bytes) : 0,
        "");
    row("act_bytes", double(report.activation_bytes_peak),
        base ? double(base->activation_bytes_peak) : 0, "");
    std::printf("  per-block:\n");
    for (const auto& b : report.blocks)
        std::printf("    %-28s flops %14.4g  params %zu\n", b.label.c_str(), b.flops,
                    b.params);

    if (!args.csv_path.empty()) {
        std::ostringstream os;
        os << "config,params,flops,weight_bytes,act_bytes\n";
        os << std::setprecision(17);
        os << report.config << "," << report.param_count << "," << report.forward_flops
           << "," << report.weight_bytes << "," << report.activation_bytes_peak << "\n";
        if (base)
            os << base->config << "," << base->param_count << "," << base->forward_flops
               << "," << base->weight_bytes << "," << base->activation_bytes_peak << "\n";
        mom::write_file_atomic(args.csv_path, os.str());
        std::printf("wrote %s\n", args.csv_path.c_str());
    }
    return 0;
}

struct TraceArgs {
    std::string ckpt;
    std::string input;
    std::string out;
};

int run_trace(const TraceArgs& args) {
    auto model = mom::load_checkpoint<float>(args.ckpt);
    auto bytes = mom::corpus_load(args.input);
    const size_t seq = model.cfg.max_seq;
    mom::AssemblyTrace trace;
    mom::NoGradGuard ng;
    uint32_t sequence = 0;
    for (size_t off = 0; off < bytes.size(); off += seq, ++sequence) {
        const size_t len = std::min(seq, bytes.size() - off);
        if (len < 2) break;
        std::vector<int> ids(len);
        for (size_t i = 0; i < len; ++i) {
            ids[i] = bytes[off + i];
            if (size_t(ids[i]) >= model.cfg.vocab)
                throw std::runtime_error("input byte " + std::to_string(ids[i]) +
                                         " exceeds model vocabulary of " +
                                         std::to_string(model.cfg.vocab));
        }
        mom::lm_forward(model, ids, &trace, sequence);
    }
    if (trace.empty())
        throw std::runtime_error("input produced no routed decisions (no chunks or too short)");
    mom::write_file_atomic(args.out, mom::trace_to_csv(trace));
    std::cout << "wrote " << trace.records.size() << " records to " << args.out << "\n";
    return 0;
}

struct AnalyzeArgs {
    std::string trace_path;
    std::string out_transitions;
    std::string out_loads;
};

int run_analyze(const AnalyzeArgs& args) {
    std::ifstream in(args.trace_path);
    if (!in) throw std::runtime_error("cannot open " + args.trace_path);
    auto trace = mom::trace_from_csv(in);
    if (trace.empty()) throw std::runtime_error("trace file holds no records");

    auto ma = mom::transition_matrix(trace, mom::RouterKind::attention);
    auto mf = mom::transition_matrix(trace, mom::RouterKind::ffn);
    auto stats = mom::load_stats(trace);

    const std::string transitions = mom::transitions_csv(ma, mf);
    const std::string loads = mom::loads_csv(stats);
    if (!args.out_transitions.empty()) {
        mom::write_file_atomic(args.out_transitions, transitions);
        std::cout << "wrote " << args.out_transitions << "\n";
    } else {
        std::cout << transitions;
    }
    if (!args.out_loads.empty()) {
        mom::write_file_atomic(args.out_loads, loads);
        std::cout << "wrote " << args.out_loads << "\n";
    } else {
        std::cout << loads;
    }
    std::printf("overall skip rate %.6f\n", stats.overall_skip_rate);
    return 0;
}

struct CorpusArgs {
    std::string out;
    size_t bytes = 1 << 20;
    uint64_t seed = 20240601;
};

int run_make_corpus(const CorpusArgs& args) {
    mom::write_file_atomic(args.out, mom::generate_corpus(args.bytes, args.seed));
    std::cout << "wrote " << args.bytes << " bytes to " << args.out << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"mixture-of-modules transformers: training, profiling, routing analysis"};
    app.require_subcommand(1);

    TrainArgs train_args;
    auto* train = app.add_subcommand("train", "run one training phase");
    train->add_option("--config", train_args.config_path, "run configuration file")
        ->required();
    train->add_option("--phase", train_args.phase, "training phase (1 or 2)")
        ->check(CLI::Range(1, 2));
    train->add_option("--init-from", train_args.init_from,
                      "phase-1 checkpoint to decompose (required for phase 2)");

    ProfileArgs profile_args;
    auto* profile = app.add_subcommand("profile", "analytical cost report");
    profile->add_option("--dims", profile_args.dims,
                        "gpt2-small | gpt2-medium | gpt2-large | custom");
    profile->add_option("--plan", profile_args.plan, "chunk plan, defaults to the preset's");
    profile->add_option("--mom", profile_args.mom, "KaHb[S] configuration")->required();
    profile->add_option("--baseline", profile_args.baseline, "KaHb[S] to diff against");
    profile->add_option("--seq-len", profile_args.seq_len, "sequence length");
    profile->add_option("--csv", profile_args.csv_path, "write CSV report here");
    profile->add_option("--assume", profile_args.assume, "no_skip | all_skip | expected");
    profile->add_option("--skip-rate", profile_args.skip_rate,
                        "skip probability for --assume expected");
    profile->add_option("--d", profile_args.custom_d, "custom hidden size");
    profile->add_option("--heads", profile_args.custom_heads, "custom head count");
    profile->add_option("--d-ff", profile_args.custom_dff, "custom FFN inner size");
    profile->add_option("--vocab", profile_args.custom_vocab, "custom vocabulary size");

    TraceArgs trace_args;
    auto* trace = app.add_subcommand("trace", "record routing decisions over a text file");
    trace->add_option("--ckpt", trace_args.ckpt, "model checkpoint")->required();
    trace->add_option("--input", trace_args.input, "input text file")->required();
    trace->add_option("--out", trace_args.out, "output trace CSV")->required();

    AnalyzeArgs analyze_args;
    auto* analyze = app.add_subcommand("analyze", "transition and load statistics");
    analyze->add_option("--trace", analyze_args.trace_path, "trace CSV from `mom trace`")
        ->required();
    analyze->add_option("--out-transitions", analyze_args.out_transitions,
                        "write kind,from,to,prob CSV here");
    analyze->add_option("--out-loads", analyze_args.out_loads,
                        "write kind,module,freq CSV here");

    CorpusArgs corpus_args;
    auto* make_corpus = app.add_subcommand("make-corpus", "generate the synthetic corpus");
    make_corpus->add_option("--out", corpus_args.out, "output path")->required();
    make_corpus->add_option("--bytes", corpus_args.bytes, "corpus size in bytes");
    make_corpus->add_option("--seed", corpus_args.seed, "generator seed");

    CLI11_PARSE(app, argc, argv);

    try {
        if (train->parsed()) {
            if (train_args.phase == 2 && train_args.init_from.empty()) {
                std::cerr << "error: --phase 2 requires --init-from <phase-1 checkpoint>\n";
                return 1;
            }
            return run_train(train_args);
        }
        if (profile->parsed()) return run_profile(profile_args);
        if (trace->parsed()) return run_trace(trace_args);
        if (analyze->parsed()) return run_analyze(analyze_args);
        if (make_corpus->parsed()) return run_make_corpus(corpus_args);
    } catch (const mom::ConfigError& e) {
        std::cerr << "configuration error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 1;
}
