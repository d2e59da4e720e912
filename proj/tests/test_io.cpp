#include <doctest.h>

#include <cstdio>
#include <sstream>

#include "mom/checkpoint.hpp"
#include "mom/run_config.hpp"
#include "mom/textgen.hpp"
#include "mom/trace_io.hpp"
#include "oracles.hpp"

using mom::MomModel;

namespace {

mom::ModelConfig io_cfg() {
    mom::ModelConfig c;
    c.d = 16;
    c.heads = 2;
    c.d_ff = 32;
    c.max_seq = 16;
    c.vocab = 32;
    return c;
}

struct TempFile {
    std::string path;
    explicit TempFile(const std::string& name) : path("/tmp/mom_test_" + name) {}
    ~TempFile() { std::remove(path.c_str()); }
};

}  // namespace

TEST_CASE("checkpoint round-trip: save, load, save is byte-identical") {
    auto model = MomModel<float>::init(io_cfg(), mom::parse_chunk_plan("[1-2-1]"),
                                       mom::parse_mom_config("K2H2S"), 400);
    auto first = mom::serialize_checkpoint(mom::checkpoint_from_model(model));
    auto data = mom::deserialize_checkpoint(first);
    auto reloaded = mom::model_from_checkpoint<float>(data);
    auto second = mom::serialize_checkpoint(mom::checkpoint_from_model(reloaded));
    CHECK(first == second);

    // Weights really landed: forward passes agree bit for bit.
    std::vector<int> ids{3, 17, 8, 30};
    auto la = mom::lm_forward(model, ids);
    auto lb = mom::lm_forward(reloaded, ids);
    for (size_t i = 0; i < la.numel(); ++i) CHECK(la.values()[i] == lb.values()[i]);
}

TEST_CASE("checkpoint file write is atomic and reloadable") {
    auto model = MomModel<float>::init_vanilla(io_cfg(), 2, 401);
    TempFile f("ckpt.bin");
    mom::save_checkpoint(f.path, model, {{"note", "io-test"}});
    auto loaded = mom::load_checkpoint<float>(f.path);
    CHECK(loaded.param_count() == model.param_count());
    auto data = mom::deserialize_checkpoint(mom::read_file(f.path));
    CHECK(*data.meta("note") == "io-test");
}

TEST_CASE("checkpoint rejects bad magic, version, truncation, dtype mismatch") {
    auto model = MomModel<float>::init_vanilla(io_cfg(), 1, 402);
    auto bytes = mom::serialize_checkpoint(mom::checkpoint_from_model(model));

    auto bad_magic = bytes;
    bad_magic[0] = 'X';
    CHECK_THROWS_WITH_AS(mom::deserialize_checkpoint(bad_magic),
                         doctest::Contains("magic"), std::runtime_error);

    auto bad_version = bytes;
    bad_version[8] = 9;
    CHECK_THROWS_WITH_AS(mom::deserialize_checkpoint(bad_version),
                         doctest::Contains("version"), std::runtime_error);

    auto truncated = bytes.substr(0, bytes.size() / 2);
    CHECK_THROWS_AS(mom::deserialize_checkpoint(truncated), std::runtime_error);

    // A double-precision model cannot load single-precision blobs.
    auto data = mom::deserialize_checkpoint(bytes);
    CHECK_THROWS_WITH_AS(mom::model_from_checkpoint<double>(data),
                         doctest::Contains("dtype"), std::runtime_error);
}

TEST_CASE("checkpoint refuses missing and surplus tensors") {
    auto model = MomModel<float>::init_vanilla(io_cfg(), 1, 403);
    auto data = mom::checkpoint_from_model(model);

    auto missing = data;
    missing.tensors.erase(missing.tensors.begin());
    CHECK_THROWS_WITH_AS(mom::model_from_checkpoint<float>(missing),
                         doctest::Contains("missing"), std::runtime_error);

    auto surplus = data;
    surplus.tensors.emplace_back("stray", surplus.tensors[0].second);
    CHECK_THROWS_AS(mom::model_from_checkpoint<float>(surplus), std::runtime_error);
}

TEST_CASE("run config: parses, defaults, rejects unknown keys by name") {
    auto corpus_text = mom::generate_corpus(4096, 3);
    TempFile corpus("corpus.txt");
    mom::write_file_atomic(corpus.path, corpus_text);

    std::istringstream good(
        "d = 32\nheads = 4\nd_ff = 64\nmax_seq = 64\nvocab = 256\n"
        "plan = [1-2-1]\nmom = K2H2S\ncorpus = " + corpus.path + "\n"
        "seed = 7\npeak_lr = 0.001\nsteps_phase1 = 10\nsteps_phase2 = 5\n"
        "batch_size = 2\nseq_len = 32\n");
    auto cfg = mom::parse_run_config(good);
    CHECK(cfg.dims.d == 32);
    CHECK(cfg.parsed_mom().k == 2);
    CHECK(cfg.train.seed == 7);
    CHECK(cfg.steps_phase1 == 10);

    std::istringstream unknown("corpus = " + corpus.path + "\nlearning_rate = 0.1\n");
    CHECK_THROWS_WITH_AS(mom::parse_run_config(unknown),
                         doctest::Contains("learning_rate"), mom::ConfigError);

    std::istringstream missing_corpus("seed = 3\n");
    CHECK_THROWS_WITH_AS(mom::parse_run_config(missing_corpus),
                         doctest::Contains("corpus"), mom::ConfigError);

    std::istringstream bad_path("corpus = /nonexistent/path.txt\n");
    CHECK_THROWS_WITH_AS(mom::parse_run_config(bad_path),
                         doctest::Contains("does not exist"), mom::ConfigError);

    std::istringstream bad_value("corpus = " + corpus.path + "\nseed = banana\n");
    CHECK_THROWS_AS(mom::parse_run_config(bad_value), mom::ConfigError);
}

TEST_CASE("trace csv round-trips and replays bit-exactly") {
    auto cfg = io_cfg();
    auto model = MomModel<float>::init(cfg, mom::parse_chunk_plan("[1-2-1]"),
                                       mom::parse_mom_config("K2H2S"), 404);
    std::vector<int> ids{1, 30, 12, 5, 19, 2};
    mom::AssemblyTrace trace;
    auto original = mom::lm_forward(model, ids, &trace, 3);

    auto csv = mom::trace_to_csv(trace);
    std::istringstream in(csv);
    auto parsed = mom::trace_from_csv(in);
    CHECK(parsed.attn_choices == trace.attn_choices);
    CHECK(parsed.ffn_has_skip == trace.ffn_has_skip);
    REQUIRE(parsed.records.size() == trace.records.size());
    for (size_t i = 0; i < parsed.records.size(); ++i) {
        CHECK(parsed.records[i].indices == trace.records[i].indices);
        CHECK(parsed.records[i].gates == trace.records[i].gates);  // bitwise
    }

    mom::ReplayIndex replay(parsed);
    auto replayed = mom::lm_forward(model, ids, nullptr, 3, &replay);
    for (size_t i = 0; i < original.numel(); ++i)
        CHECK(original.values()[i] == replayed.values()[i]);
}

TEST_CASE("metrics formatting is stable and complete") {
    mom::StepMetrics m;
    m.step = 42;
    m.phase = 2;
    m.loss = 2.345678;
    m.lr = 0.00095;
    CHECK(mom::format_metrics(m) == "step=42 phase=2 loss=2.345678 lr=0.00095");
    m.val_loss = 2.5;
    CHECK(mom::format_metrics(m) ==
          "step=42 phase=2 loss=2.345678 lr=0.00095 val_loss=2.500000");
}
