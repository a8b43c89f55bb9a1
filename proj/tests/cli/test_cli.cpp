#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <iterator>
#include <json.hpp>
#include <sstream>
#include <string>
#include <vector>

#include "commands.hpp"

namespace fs = std::filesystem;
using Json = nlohmann::json;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    static int n = 0;
    path = fs::temp_directory_path() / ("refit_cli_" + std::to_string(::getpid()) + "_" + std::to_string(n++));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& name) const { return (path / name).string(); }
};

int cli(std::vector<std::string> args) {
  args.insert(args.begin(), "refit");
  return refit::app::run_cli(args);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::vector<std::string> lines(const fs::path& p) {
  std::istringstream in(slurp(p));
  std::vector<std::string> out;
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

// Small, fast settings shared by the runs below.
std::vector<std::string> small(std::vector<std::string> a) {
  for (const char* kv : {"data.synthetic.num_users=60", "data.synthetic.num_items=40", "model.hidden=8",
                         "model.time_embedding=4", "finetune.batch_users=30", "finetune.iterations=6",
                         "finetune.eval_every=3"}) {
    a.push_back("-s");
    a.push_back(kv);
  }
  return a;
}

std::string pretrained(const TempDir& t, int epochs = 3) {
  REQUIRE(cli(small({"pretrain", "-o", t / "pre", "-s", "pretrain.epochs=" + std::to_string(epochs)})) == 0);
  return t / "pre/pretrained.ckpt";
}

}  // namespace

TEST_CASE("synth is byte-identical across runs") {
  TempDir t;
  REQUIRE(cli({"synth", "-o", t / "a"}) == 0);
  REQUIRE(cli({"synth", "-o", t / "b"}) == 0);
  CHECK(!slurp(t / "a/data.csr").empty());
  CHECK(slurp(t / "a/data.csr") == slurp(t / "b/data.csr"));
  REQUIRE(cli({"synth", "-o", t / "c", "-s", "seed=2"}) == 0);
  CHECK(slurp(t / "a/data.csr") != slurp(t / "c/data.csr"));
  auto manifest = Json::parse(slurp(t / "a/manifest.json"));
  CHECK(manifest["command"] == "synth");
  CHECK(manifest["num_users"] == 200);
}

TEST_CASE("pretrain writes one loss row per epoch") {
  TempDir t;
  pretrained(t, 4);
  auto rows = lines(t / "pre/loss_curve.csv");
  REQUIRE(rows.size() == 5);
  CHECK(rows[0] == "epoch,mean_loss,val_ndcg@10");
  CHECK(rows[4].rfind("4,", 0) == 0);
  CHECK(fs::exists(t / "pre/final.ckpt"));
  CHECK(fs::exists(t / "pre/resolved_config.json"));
}

TEST_CASE("exit codes") {
  TempDir t;
  CHECK(cli({"finetune", "-o", t / "x"}) == 2);
  CHECK(cli({"finetune", "-o", t / "x", "--checkpoint", t / "missing.ckpt"}) == 2);
  CHECK(cli({"pretrain", "-o", t / "x", "-s", "pretrain.no_such_key=1"}) == 2);
  CHECK(cli({"pretrain", "--no-such-flag"}) == 2);
  CHECK(cli({"pretrain", "-o", t / "x", "-c", t / "absent.json"}) == 2);
  CHECK(cli({"pretrain", "-o", t / "x", "-s", "data.split.train_frac=1.5"}) == 2);
  const auto ck = pretrained(t);
  CHECK(cli(small({"finetune", "-o", t / "div", "--checkpoint", ck, "-s", "finetune.learning_rate=1e300"})) == 3);
  CHECK(cli(small({"finetune", "-o", t / "ok", "--checkpoint", ck})) == 0);
}

TEST_CASE("a resolved config replays to identical artifacts") {
  TempDir t;
  const auto ck = pretrained(t);
  REQUIRE(cli(small({"finetune", "-o", t / "a", "--checkpoint", ck})) == 0);
  REQUIRE(cli({"finetune", "-c", t / "a/resolved_config.json", "-o", t / "b"}) == 0);
  for (auto f : {"curves.csv", "best.ckpt", "final.ckpt"}) CHECK(slurp(t / "a/" + f) == slurp(t / "b/" + f));
  auto cfg = Json::parse(slurp(t / "a/resolved_config.json"));
  CHECK(cfg["finetune"]["iterations"] == 6);
  CHECK(cfg["checkpoint"] == fs::absolute(ck).string());
}

TEST_CASE("fine-tuning methods share one report schema") {
  TempDir t;
  const auto ck = pretrained(t);
  std::vector<std::string> headers;
  std::vector<std::vector<std::string>> keys;
  for (auto m : {"REINFORCE", "ELBO", "RWR"}) {
    const std::string dir = t / m;
    REQUIRE(cli(small({"finetune", "-o", dir, "--checkpoint", ck, "-s", std::string("finetune.method=") + m})) == 0);
    auto rows = lines(dir + "/curves.csv");
    REQUIRE(rows.size() == 8);
    headers.push_back(rows[0]);
    auto man = Json::parse(slurp(dir + "/manifest.json"));
    CHECK(man["method"] == m);
    std::vector<std::string> k;
    for (auto it = man.begin(); it != man.end(); ++it) k.push_back(it.key());
    keys.push_back(k);
  }
  CHECK(headers[0] == "iteration,mean_reward,mean_loss,val_recall@10,val_recall@20,val_ndcg@10,val_ndcg@20");
  CHECK(headers[1] == headers[0]);
  CHECK(headers[2] == headers[0]);
  CHECK(keys[1] == keys[0]);
  CHECK(keys[2] == keys[0]);
}

TEST_CASE("alpha sweep writes a comparison table") {
  TempDir t;
  const auto ck = pretrained(t);
  REQUIRE(cli(small({"finetune", "-o", t / "sweep", "--checkpoint", ck, "-s", "finetune.alphas=[0.3,0.5,0.7,1.0]"})) ==
          0);
  auto rows = lines(t / "sweep/comparison.csv");
  REQUIRE(rows.size() == 5);
  CHECK(rows[0].rfind("alpha,", 0) == 0);
  CHECK(rows[1].rfind("0.3,", 0) == 0);
  CHECK(rows[4].rfind("1,", 0) == 0);
  for (auto sub : {"alpha_0.3", "alpha_1"}) CHECK(fs::exists(t / (std::string("sweep/") + sub + "/curves.csv")));
}

TEST_CASE("eval reports metrics for a checkpoint") {
  TempDir t;
  const auto ck = pretrained(t);
  REQUIRE(cli(small({"eval", "-o", t / "ev", "--checkpoint", ck})) == 0);
  auto j = Json::parse(slurp(t / "ev/metrics.json"));
  CHECK(j["recall"].contains("@10"));
  CHECK(j["ndcg"].contains("@20"));
  CHECK(lines(t / "ev/metrics.csv")[0] == "metric,n,value");
  CHECK(cli(small({"eval", "-o", t / "ev2", "--checkpoint", ck, "-s", "eval.split=\"train\""})) == 2);
}

TEST_CASE("bench writes a scaling report") {
  TempDir t;
  REQUIRE(cli({"bench", "-o", t / "b", "-s", "bench.sizes=[200,400,800]", "-s", "bench.fixed_other=100", "-s",
               "bench.iters_per_point=2"}) == 0);
  auto j = Json::parse(slurp(t / "b/scaling.json"));
  CHECK(j["points"].size() == 3);
  CHECK(j["doubling_ratios"].size() == 2);
  CHECK(cli({"bench", "-o", t / "b2", "-s", "bench.sizes=[400,200,800]"}) == 2);
}
