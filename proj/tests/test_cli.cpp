#include <doctest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "mdseg/io.hpp"
#include "mdseg/metrics.hpp"

#include <json.hpp>

using namespace mdseg;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("mdseg_cli_" + std::to_string(::getpid()) + "_" +
            std::to_string(reinterpret_cast<std::uintptr_t>(this)));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string sub(const char* name) const { return (path / name).string(); }
};

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

int run_cli(const std::string& args, std::string* output = nullptr) {
  static int counter = 0;
  const std::string cap = (fs::temp_directory_path() /
                           ("mdseg_cli_out_" + std::to_string(::getpid()) + "_" +
                            std::to_string(counter++)))
                              .string();
  const std::string cmd = std::string(MDSEG_BIN) + " " + args + " > " + cap + " 2>&1";
  const int rc = std::system(cmd.c_str());
  if (output) *output = slurp(cap);
  fs::remove(cap);
  REQUIRE(WIFEXITED(rc));
  return WEXITSTATUS(rc);
}

// one shared tiny dataset + trained checkpoint for the wiring tests
struct Workspace {
  TempDir dir;
  std::string data_args, manifest, run;
  Workspace() {
    manifest = dir.sub("data") + "/manifest.jsonl";
    run = dir.sub("run");
    REQUIRE(run_cli("gen-data --output-dir " + dir.sub("data") +
                    " --set data.image_size=16 --set data.labeled_count=2"
                    " --set data.unlabeled_count=8 --set data.test_per_domain=1") == 0);
    REQUIRE(run_cli("train --ablation cpm+cmmd --data " + manifest +
                    " --output-dir " + run +
                    " --set train.iter_max=6 --set model.base_width=2"
                    " --set model.depth=2 --set cmmd.refresh_interval=3"
                    " --set cmmd.bank_size=16") == 0);
  }
};

Workspace& ws() {
  static Workspace w;
  return w;
}

}  // namespace

TEST_CASE("help exits cleanly") {
  std::string out;
  CHECK(run_cli("--help", &out) == 0);
  CHECK(out.find("gen-data") != std::string::npos);
  CHECK(out.find("train") != std::string::npos);
}

TEST_CASE("gen-data writes a loadable dataset and resolved config") {
  auto& w = ws();
  CHECK(fs::exists(w.manifest));
  auto items = read_manifest(w.manifest);
  CHECK(items.size() == 2 + 8 + 4);
  const std::string rc = slurp(w.dir.sub("data") + "/resolved-config.json");
  auto j = json::parse(rc);
  CHECK(j.at("data").at("image_size").get<int>() == 16);
  CHECK(j.contains("_decisions"));
}

TEST_CASE("gen-data creates nested output directories") {
  TempDir tmp;
  CHECK(run_cli("gen-data --output-dir " + tmp.sub("a/b/c") +
                " --set data.image_size=16 --set data.labeled_count=1"
                " --set data.unlabeled_count=4 --set data.test_per_domain=1") == 0);
  CHECK(fs::exists(tmp.sub("a/b/c") + "/manifest.jsonl"));
}

TEST_CASE("gen-data rejects an invalid domain count naming the field") {
  TempDir tmp;
  std::string out;
  CHECK(run_cli("gen-data --output-dir " + tmp.sub("d") + " --set data.k=1", &out) == 2);
  CHECK(out.find("k must be >= 2") != std::string::npos);
}

TEST_CASE("gen-data requires an output directory") {
  CHECK(run_cli("gen-data") == 2);
}

TEST_CASE("train writes logs, checkpoints, stats and honours overrides") {
  auto& w = ws();
  CHECK(fs::exists(w.run + "/train_log.csv"));
  CHECK(fs::exists(w.run + "/checkpoint_final/checkpoint.json"));
  CHECK(fs::exists(w.run + "/resolved-config.json"));

  std::ifstream log(w.run + "/train_log.csv");
  std::string header;
  std::getline(log, header);
  int rows = 0;
  for (std::string line; std::getline(log, line);)
    if (!line.empty()) ++rows;
  CHECK(rows == 6);  // iter_max override took effect

  auto stats = json::parse(slurp(w.run + "/train_stats.json"));
  CHECK(stats.at("iterations").get<int>() == 6);
  CHECK(stats.at("counters").at("bank_pushes").get<long>() > 0);
}

TEST_CASE("train rejects unknown ablations and missing data") {
  TempDir tmp;
  std::string out;
  CHECK(run_cli("train --ablation dropout --data " + ws().manifest +
                " --output-dir " + tmp.sub("x"), &out) == 2);
  CHECK(out.find("ablation") != std::string::npos);
  CHECK(run_cli("train --ablation cpm --output-dir " + tmp.sub("y")) == 2);
  CHECK(run_cli("train --ablation cpm --data " + tmp.sub("nothere.jsonl") +
                " --output-dir " + tmp.sub("z")) == 2);
}

TEST_CASE("train rejects unknown config keys") {
  TempDir tmp;
  const std::string cfg = tmp.sub("config.json");
  {
    std::ofstream f(cfg);
    f << R"({"train": {"iter_mxa": 5}})";
  }
  std::string out;
  CHECK(run_cli("train --ablation baseline --config " + cfg + " --data " +
                ws().manifest + " --output-dir " + tmp.sub("o"), &out) == 2);
  CHECK(out.find("iter_mxa") != std::string::npos);
}

TEST_CASE("baseline log keeps the domain loss at zero") {
  auto& w = ws();
  TempDir tmp;
  REQUIRE(run_cli("train --ablation baseline --data " + w.manifest +
                  " --output-dir " + tmp.sub("b") +
                  " --set train.iter_max=4 --set model.base_width=2"
                  " --set model.depth=2") == 0);
  std::ifstream log(tmp.sub("b") + "/train_log.csv");
  std::string header;
  std::getline(log, header);
  // locate the l_domain column
  std::vector<std::string> cols;
  std::stringstream hs(header);
  for (std::string c; std::getline(hs, c, ',');) cols.push_back(c);
  std::size_t dom = 0;
  for (std::size_t i = 0; i < cols.size(); ++i)
    if (cols[i] == "l_domain") dom = i;
  REQUIRE(dom > 0);
  for (std::string line; std::getline(log, line);) {
    if (line.empty()) continue;
    std::stringstream ls(line);
    std::vector<std::string> vals;
    for (std::string v; std::getline(ls, v, ',');) vals.push_back(v);
    CHECK(vals.at(dom) == "0");
  }

  auto stats = json::parse(slurp(tmp.sub("b") + "/train_stats.json"));
  CHECK(stats.at("counters").at("hdbscan_runs").get<long>() == 0);
  CHECK(stats.at("counters").at("mmd_evals").get<long>() == 0);
  CHECK(stats.at("counters").at("bank_pushes").get<long>() == 0);
}

TEST_CASE("rerunning from the resolved config reproduces the log bit-exactly") {
  auto& w = ws();
  TempDir tmp;
  REQUIRE(run_cli("train --config " + w.run + "/resolved-config.json"
                  " --output-dir " + tmp.sub("again")) == 0);
  CHECK(slurp(tmp.sub("again") + "/train_log.csv") ==
        slurp(w.run + "/train_log.csv"));
}

TEST_CASE("diverging training exits with the numerical failure code") {
  auto& w = ws();
  TempDir tmp;
  std::string out;
  CHECK(run_cli("train --ablation baseline --data " + w.manifest +
                " --output-dir " + tmp.sub("boom") +
                " --set train.iter_max=50 --set model.base_width=2"
                " --set model.depth=2 --set train.lr=1e9", &out) == 3);
  auto stats = json::parse(slurp(tmp.sub("boom") + "/train_stats.json"));
  CHECK(stats.at("aborted").get<bool>());
}

TEST_CASE("eval prints the fixed table and writes metrics files") {
  auto& w = ws();
  TempDir tmp;
  std::string out;
  CHECK(run_cli("eval --checkpoint " + w.run + "/checkpoint_final --data " +
                w.manifest + " --output-dir " + tmp.sub("ev"), &out) == 0);
  CHECK(out.find("domain,items,dc,jc,hd,asd") != std::string::npos);
  CHECK(out.find("avg,") != std::string::npos);
  CHECK(fs::exists(tmp.sub("ev") + "/metrics.csv"));
  auto j = json::parse(slurp(tmp.sub("ev") + "/metrics.json"));
  CHECK(j.at("per_domain").size() == 4);
  auto rc = json::parse(slurp(tmp.sub("ev") + "/resolved-config.json"));
  CHECK(rc.at("eval").at("which").get<std::string>() == "teacher");
}

TEST_CASE("eval fails cleanly on a missing checkpoint") {
  auto& w = ws();
  TempDir tmp;
  CHECK(run_cli("eval --checkpoint " + tmp.sub("ghost") + " --data " + w.manifest +
                " --output-dir " + tmp.sub("ev")) == 2);
  CHECK(run_cli("eval --data " + w.manifest + " --output-dir " + tmp.sub("ev2")) == 2);
}

TEST_CASE("embed rejects layer zero") {
  auto& w = ws();
  TempDir tmp;
  CHECK(run_cli("embed --checkpoint " + w.run + "/checkpoint_final --data " +
                w.manifest + " --output-dir " + tmp.sub("e") + " --layer 0") == 2);
}

TEST_CASE("embed dumps features whose silhouette matches the json") {
  auto& w = ws();
  TempDir tmp;
  const std::string out_dir = tmp.sub("emb");
  REQUIRE(run_cli("embed --checkpoint " + w.run + "/checkpoint_final --data " +
                  w.manifest + " --output-dir " + out_dir) == 0);

  auto records = read_mdt1_multi(out_dir + "/embedding.mdt", 3);
  auto features = std::get<Tensor<float>>(records[0]);
  auto pca2 = std::get<Tensor<double>>(records[1]);
  auto doms = std::get<Tensor<double>>(records[2]);
  const std::size_t n = features.dim(0);
  CHECK(n == 4);  // one per test item
  CHECK(pca2.dim(0) == n);
  CHECK(pca2.dim(1) == 2);

  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = int(doms[i]);
  auto sil = silhouette(features.template cast<double>(), labels);

  auto j = json::parse(slurp(out_dir + "/silhouette.json"));
  CHECK(j.at("layer").get<int>() == 2);  // defaults to the deepest layer
  CHECK(j.at("which").get<std::string>() == "student");
  REQUIRE(sil.defined == !j.at("silhouette").is_null());
  if (sil.defined)
    CHECK(j.at("silhouette").get<double>() ==
          doctest::Approx(sil.value).epsilon(1e-12));

  const std::string svg = slurp(out_dir + "/embedding.svg");
  CHECK(svg.find("<svg") != std::string::npos);
  std::size_t points = 0;  // data points are r=4.5; legend dots are r=5
  for (std::size_t pos = 0; (pos = svg.find("r=\"4.5\"", pos)) != std::string::npos;
       ++pos)
    ++points;
  CHECK(points == n);
}
