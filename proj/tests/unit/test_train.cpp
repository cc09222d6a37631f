#include <doctest.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "cg/common.hpp"
#include "cg/train.hpp"

using namespace cg;

namespace {

ModelConfig tiny_model() {
    ModelConfig cfg;
    cfg.channels = 16;
    cfg.moe.experts = 2;
    cfg.moe.top_k = 2;
    cfg.moe.rank = 2;
    cfg.moe.cascades = 1;
    cfg.fusion.heads = 2;
    cfg.fusion.embed = 8;
    cfg.fusion.groups = 2;
    return cfg;
}

CorpusConfig tiny_corpus_config() {
    // Large enough that every (domain, category) stratum reaches the val and
    // test splits, small enough to keep scene rendering instant.
    CorpusConfig cc;
    cc.scenes = 120;
    cc.width = 32;
    cc.height = 32;
    cc.max_objects = 1;
    cc.seed = 11;
    return cc;
}

const LoadedCorpus& shared_corpus() {
    static LoadedCorpus corpus = [] {
        std::string dir = "/tmp/cg_train_corpus";
        std::filesystem::remove_all(dir);
        auto scenes = generate_corpus(tiny_corpus_config());
        auto records = write_corpus(scenes, dir);
        SplitResult split = split_dataset(records, 11);
        std::filesystem::create_directories(dir + "/splits");
        write_id_list(split.train, dir + "/splits/train.txt");
        write_id_list(split.val, dir + "/splits/val.txt");
        write_id_list(split.test, dir + "/splits/test.txt");
        return load_corpus(dir);
    }();
    return corpus;
}

RunConfig tiny_run() {
    RunConfig c;
    c.seed = 5;
    c.model = tiny_model();
    c.data.dir = "/tmp/cg_train_corpus";
    c.data.image_size = 32;
    c.train.epochs = 2;
    c.train.batch_size = 8;
    c.train.val_interval = 0;
    c.negatives.capacity = 10;
    c.negatives.random_hi = 3;
    return c;
}

std::vector<std::string> ids_of(const std::vector<std::string>& v, size_t n) {
    return {v.begin(), v.begin() + std::min(n, v.size())};
}

}  // namespace

TEST_CASE("train_subset keeps a seeded exact fraction, nested across ratios") {
    std::vector<std::string> ids(20);
    for (int i = 0; i < 20; ++i) ids[size_t(i)] = "s" + std::to_string(i);

    auto full = train_subset(ids, 1.0, 9);
    CHECK(full.size() == 20);
    CHECK(std::set<std::string>(full.begin(), full.end()) ==
          std::set<std::string>(ids.begin(), ids.end()));

    auto p30 = train_subset(ids, 0.3, 9);
    auto p60 = train_subset(ids, 0.6, 9);
    CHECK(p30.size() == 6);
    CHECK(p60.size() == 12);
    for (size_t i = 0; i < p30.size(); ++i) CHECK(p30[i] == p60[i]);
    for (size_t i = 0; i < p60.size(); ++i) CHECK(p60[i] == full[i]);

    CHECK(train_subset(ids, 0.3, 9) == p30);
    CHECK(train_subset(ids, 0.3, 10) != p30);
    CHECK_THROWS_AS(train_subset(ids, 0.0, 9), ContractViolation);
    CHECK_THROWS_AS(train_subset(ids, 1.2, 9), ContractViolation);
    CHECK(train_subset(ids, 0.001, 9).size() == 1);
}

TEST_CASE("batch_loss reports every component of the objective") {
    const LoadedCorpus& corpus = shared_corpus();
    RunConfig cfg = tiny_run();
    Rng mr(3);
    Model m = make_model(cfg.model, mr);

    std::vector<Sample> batch;
    for (size_t i = 0; i < corpus.records.size() && batch.size() < 4; ++i)
        batch.push_back(record_to_sample(corpus.records[i], corpus.root));
    std::vector<std::string> pool;
    for (const auto& r : corpus.records) pool.push_back(r.caption);
    Rng rng(1);
    BatchLoss out = batch_loss(m, cfg, batch, pool, rng);

    CHECK(out.total.defined());
    CHECK(out.total.all_finite());
    CHECK(out.report.cls > 0.0);
    CHECK(out.report.box > 0.0);
    CHECK(out.report.dfl > 0.0);
    CHECK(out.report.region > 0.0);
    CHECK(out.report.balance >= 1.0 - 1e-9);
    CHECK(out.report.routing_entropy >= 0.0);
    double expected = cfg.weights.cls * out.report.cls + cfg.weights.box * out.report.box +
                      cfg.weights.dfl * out.report.dfl + cfg.weights.region * out.report.region +
                      cfg.weights.balance * out.report.balance;
    CHECK(out.total.item() == doctest::Approx(expected).epsilon(1e-9));
    CHECK(out.report.total == doctest::Approx(expected).epsilon(1e-9));
}

TEST_CASE("one epoch logs exactly ceil(n / batch) steps with full reports") {
    LoadedCorpus corpus = shared_corpus();
    corpus.split.train = ids_of(corpus.split.train, 27);
    RunConfig cfg = tiny_run();
    cfg.train.epochs = 1;
    cfg.train.batch_size = 8;

    Rng mr(3);
    Model m = make_model(cfg.model, mr);
    std::vector<LossReport> reports;
    TrainResult res = train_model(m, cfg, corpus,
                                  [&](int64_t, double lr, const LossReport& r) {
                                      CHECK(lr > 0.0);
                                      reports.push_back(r);
                                  });
    CHECK(res.steps == 4);
    REQUIRE(reports.size() == 4);
    for (const auto& r : reports) {
        CHECK(r.cls > 0.0);
        CHECK(r.box > 0.0);
        CHECK(r.dfl > 0.0);
        CHECK(r.region > 0.0);
        CHECK(r.balance > 0.0);
        CHECK(std::isfinite(r.total));
        CHECK(r.routing_entropy >= 0.0);
    }
    CHECK(res.final_val_mean_iou == -1.0);
}

TEST_CASE("the data-ratio flag trains on a seeded strict subset") {
    LoadedCorpus corpus = shared_corpus();
    corpus.split.train = ids_of(corpus.split.train, 20);
    RunConfig cfg = tiny_run();
    cfg.train.epochs = 1;
    cfg.train.batch_size = 4;
    cfg.train.data_ratio = 0.5;

    Rng mr(3);
    Model m = make_model(cfg.model, mr);
    TrainResult res = train_model(m, cfg, corpus, nullptr);
    CHECK(res.steps == 3);  // 10 samples in batches of 4
}

TEST_CASE("identical seeded runs produce identical models and logs") {
    LoadedCorpus corpus = shared_corpus();
    corpus.split.train = ids_of(corpus.split.train, 16);
    RunConfig cfg = tiny_run();
    cfg.train.epochs = 2;
    cfg.train.batch_size = 8;

    auto run = [&](std::vector<double>& totals) {
        Rng mr(3);
        Model m = make_model(cfg.model, mr);
        train_model(m, cfg, corpus,
                    [&](int64_t, double, const LossReport& r) { totals.push_back(r.total); });
        return m;
    };
    std::vector<double> ta, tb;
    Model a = run(ta), b = run(tb);

    CHECK(ta == tb);
    auto pa = named_parameters(a), pb = named_parameters(b);
    for (size_t i = 0; i < pa.size(); ++i) {
        auto da = pa[i].second->data(), db = pb[i].second->data();
        for (size_t j = 0; j < da.size(); ++j) CHECK(da[j] == db[j]);
    }
    CHECK(a.embed8.run_mean == b.embed8.run_mean);
    CHECK(a.embed16.run_var == b.embed16.run_var);
}

TEST_CASE("a short run drives the training loss down") {
    LoadedCorpus corpus = shared_corpus();
    corpus.split.train = ids_of(corpus.split.train, 16);
    RunConfig cfg = tiny_run();
    cfg.train.epochs = 10;
    cfg.train.batch_size = 8;

    Rng mr(3);
    Model m = make_model(cfg.model, mr);
    std::vector<double> totals;
    train_model(m, cfg, corpus,
                [&](int64_t, double, const LossReport& r) { totals.push_back(r.total); });
    REQUIRE(totals.size() == 20);
    double first = (totals[0] + totals[1]) / 2.0;
    double last = (totals[18] + totals[19]) / 2.0;
    CHECK(last < first);
}

TEST_CASE("validation runs on the configured cadence") {
    LoadedCorpus corpus = shared_corpus();
    corpus.split.train = ids_of(corpus.split.train, 8);
    RunConfig cfg = tiny_run();
    cfg.train.epochs = 3;
    cfg.train.val_interval = 2;

    Rng mr(3);
    Model m = make_model(cfg.model, mr);
    std::vector<int> val_epochs;
    TrainResult res = train_model(m, cfg, corpus, nullptr,
                                  [&](int epoch, const MetricsReport& rep) {
                                      val_epochs.push_back(epoch);
                                      CHECK(rep.overall.n == int(corpus.split.val.size()));
                                  });
    CHECK(val_epochs == std::vector<int>{2, 3});
    CHECK(res.final_val_mean_iou >= 0.0);
}

TEST_CASE("evaluate_split grounds every listed sample and honors masking") {
    const LoadedCorpus& corpus = shared_corpus();
    RunConfig cfg = tiny_run();
    Rng mr(3);
    Model m = make_model(cfg.model, mr);

    std::vector<std::string> ids = ids_of(corpus.split.test, 4);
    std::vector<std::string> skipped;
    MetricsReport plain = evaluate_split(m, corpus, ids, 0.0, 5, &skipped);
    CHECK(plain.overall.n == int(ids.size()));
    CHECK(skipped.empty());
    int domain_total = 0;
    for (auto& [name, s] : plain.domains) domain_total += s.n;
    CHECK(domain_total == plain.overall.n);

    MetricsReport again = evaluate_split(m, corpus, ids, 0.0, 5);
    CHECK(metrics_to_json(again) == metrics_to_json(plain));

    MetricsReport masked = evaluate_split(m, corpus, ids, 1.0, 5);
    CHECK(masked.overall.n == int(ids.size()));
}

TEST_CASE("evaluate_split skips records whose image file is gone") {
    std::string dir = "/tmp/cg_train_missing";
    std::filesystem::remove_all(dir);
    CorpusConfig cc = tiny_corpus_config();
    cc.scenes = 6;
    auto scenes = generate_corpus(cc);
    auto records = write_corpus(scenes, dir);
    std::filesystem::create_directories(dir + "/splits");
    SplitResult split;
    for (const auto& r : records) split.train.push_back(r.id);
    write_id_list(split.train, dir + "/splits/train.txt");
    write_id_list(split.train, dir + "/splits/val.txt");
    write_id_list(split.train, dir + "/splits/test.txt");
    LoadedCorpus corpus = load_corpus(dir);

    std::filesystem::remove(dir + "/" + corpus.records[0].image);
    RunConfig cfg = tiny_run();
    Rng mr(3);
    Model m = make_model(cfg.model, mr);
    std::vector<std::string> skipped;
    MetricsReport rep = evaluate_split(m, corpus, corpus.split.test, 0.0, 1, &skipped);
    REQUIRE(skipped.size() == 1);
    CHECK(skipped[0] == corpus.records[0].id);
    CHECK(rep.overall.n == int(corpus.split.test.size()) - 1);
}

TEST_CASE("probe accuracy is a deterministic fraction") {
    CorpusConfig cc;
    cc.width = 64;
    cc.height = 64;
    cc.seed = 2;
    auto probes = generate_probe_scenes(6, cc, 3);
    RunConfig cfg = tiny_run();
    Rng mr(3);
    Model m = make_model(cfg.model, mr);
    double acc = probe_accuracy(m, probes);
    CHECK(acc >= 0.0);
    CHECK(acc <= 1.0);
    CHECK(probe_accuracy(m, probes) == acc);
}

TEST_CASE("load_corpus surfaces missing split files as i/o errors") {
    CHECK_THROWS_AS(load_corpus("/tmp/cg_not_a_corpus"), IoError);
}
