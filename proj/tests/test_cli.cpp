#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "cli.hpp"
#include "doctest.h"
#include "json.hpp"
#include "xmh/datamodel.hpp"
#include "xmh/networks.hpp"
#include "xmh/retrieval.hpp"

namespace fs = std::filesystem;
using namespace xmh;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run xmh_run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Fresh scratch directory per test case.
struct Scratch {
  fs::path dir;
  explicit Scratch(const std::string& name) : dir(fs::temp_directory_path() / ("xmh_test_cli_" + name)) {
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  ~Scratch() { fs::remove_all(dir); }
  std::string operator/(const std::string& f) const { return (dir / f).string(); }
};

void make_data(const Scratch& s) {
  REQUIRE(xmh_run({"synth", "--n", "60", "--c", "3", "--dv", "12", "--dt", "20", "--seed", "5", "--query-n", "15",
                   "--query-out", s / "query.xmhd", "--out", s / "db.xmhd"})
              .code == 0);
}

std::vector<std::string> train_args(const Scratch& s) {
  return {"train",          "--data", s / "db.xmhd", "--out", s / "model.xmhm", "--log", s / "log.jsonl", "--k",
          "8",              "--epochs", "2",          "--batch", "16",          "--lr", "1e-3",
          "--width-factor", "0.0625"};
}

}  // namespace

TEST_CASE("synth writes a dataset and prints a summary") {
  Scratch s("synth");
  const Run r = xmh_run({"synth", "--n", "30", "--c", "3", "--dv", "12", "--dt", "20", "--out", s / "a.xmhd"});
  CHECK(r.code == 0);
  CHECK(r.out.find("n=30 d_v=12 d_t=20 c=3") != std::string::npos);
  CHECK(r.out.find("label cardinality:") != std::string::npos);
  const Dataset d = load_dataset(s / "a.xmhd");
  CHECK(d.dims() == DatasetDims{30, 12, 20, 3});

  SynthOptions o;
  o.n = 30;
  o.classes = 3;
  o.image_dim = 12;
  o.text_dim = 20;
  CHECK(d == synth_dataset(o));

  REQUIRE(xmh_run({"synth", "--n", "30", "--c", "3", "--dv", "12", "--dt", "20", "--out", s / "b.xmhd"}).code == 0);
  CHECK(slurp(s / "a.xmhd") == slurp(s / "b.xmhd"));
}

TEST_CASE("synth query split is the tail of one generated pool") {
  Scratch s("split");
  make_data(s);
  const Dataset db = load_dataset(s / "db.xmhd");
  const Dataset q = load_dataset(s / "query.xmhd");
  CHECK(db.size() == 60);
  CHECK(q.size() == 15);
  SynthOptions o;
  o.n = 75;
  o.classes = 3;
  o.image_dim = 12;
  o.text_dim = 20;
  o.seed = 5;
  const Dataset all = synth_dataset(o);
  CHECK(slice_dataset(all, 0, 60) == db);
  CHECK(slice_dataset(all, 60, 75) == q);
}

TEST_CASE("usage errors exit 2") {
  Scratch s("usage");
  CHECK(xmh_run({"synth", "--n", "1", "--out", s / "x.xmhd"}).code == 2);
  CHECK(xmh_run({"synth", "--c", "8", "--dv", "4", "--out", s / "x.xmhd"}).code == 2);
  CHECK(xmh_run({"synth", "--bogus"}).code == 2);
  CHECK(xmh_run({}).code == 2);
  CHECK(xmh_run({"frobnicate"}).code == 2);
  CHECK(xmh_run({"train", "--data", s / "missing.xmhd", "--out", s / "m.xmhm"}).code == 2);
  CHECK(xmh_run({"synth", "--config", s / "missing.cfg", "--out", s / "x.xmhd"}).code == 2);
}

TEST_CASE("data errors exit 3") {
  Scratch s("data");
  {
    std::ofstream f(s / "junk.xmhd", std::ios::binary);
    f << "not a dataset";
  }
  const Run r = xmh_run({"train", "--data", s / "junk.xmhd", "--out", s / "m.xmhm", "--epochs", "0"});
  CHECK(r.code == 3);
  CHECK(r.err.find("magic") != std::string::npos);
}

TEST_CASE("train with zero epochs saves the initialized model") {
  Scratch s("train0");
  make_data(s);
  const Run r = xmh_run({"train", "--data", s / "db.xmhd", "--out", s / "m.xmhm", "--epochs", "0", "--k", "8",
                         "--width-factor", "0.0625", "--seed", "3"});
  CHECK(r.code == 0);
  CHECK(r.out.empty());
  const Model m = load_model(s / "m.xmhm");
  CHECK(m == Model::create(ModelShape{8, 3, 12, 20, 256}, 3));
}

TEST_CASE("train defaults") {
  Scratch s("defaults");
  make_data(s);
  // Full width with default hyper-parameters; zero epochs keeps it quick.
  REQUIRE(xmh_run({"train", "--data", s / "db.xmhd", "--out", s / "m.xmhm", "--epochs", "0"}).code == 0);
  const Model m = load_model(s / "m.xmhm");
  CHECK(m.shape.code_length == 16);
  CHECK(m.label.layers[0].weight.cols() == 4096);
  CHECK(m == Model::create(ModelShape{16, 3, 12, 20, 4096}, 1));
}

TEST_CASE("train logs one JSON line per epoch and is reproducible") {
  Scratch s("train");
  make_data(s);
  REQUIRE(xmh_run(train_args(s)).code == 0);
  const std::string first = slurp(s / "model.xmhm");
  std::istringstream log(slurp(s / "log.jsonl"));
  std::string line;
  int epochs = 0;
  while (std::getline(log, line)) {
    const auto j = nlohmann::json::parse(line);
    CHECK(j["epoch"] == ++epochs);
    CHECK(j.contains("L_gen"));
    CHECK(j["label"].contains("j4"));
  }
  CHECK(epochs == 2);
  REQUIRE(xmh_run(train_args(s)).code == 0);
  CHECK(slurp(s / "model.xmhm") == first);
}

TEST_CASE("encode and eval") {
  Scratch s("eval");
  make_data(s);
  REQUIRE(xmh_run(train_args(s)).code == 0);
  const Run enc = xmh_run({"encode", "--model", s / "model.xmhm", "--data", s / "query.xmhd", "--modality", "img",
                           "--out", s / "q.xmhc"});
  CHECK(enc.code == 0);
  CHECK(enc.out.find("m=15 K=8 modality img") != std::string::npos);
  REQUIRE(xmh_run({"encode", "--model", s / "model.xmhm", "--data", s / "db.xmhd", "--modality", "txt", "--out",
                   s / "db.xmhc"})
              .code == 0);
  CHECK(xmh_run({"encode", "--model", s / "model.xmhm", "--data", s / "db.xmhd", "--modality", "audio", "--out",
                 s / "x.xmhc"})
            .code == 2);

  const Run ev = xmh_run({"eval", "--query-data", s / "query.xmhd", "--db-data", s / "db.xmhd", "--query-codes",
                          s / "q.xmhc", "--db-codes", s / "db.xmhc", "--name", "I->T", "--p-at-n", "5,20",
                          "--threads", "2", "--out", s / "metrics.json"});
  REQUIRE(ev.code == 0);
  CHECK(ev.out.find("I->T: MAP") != std::string::npos);
  const auto j = nlohmann::json::parse(slurp(s / "metrics.json"));
  REQUIRE(j["reports"].size() == 1);
  const auto& rep = j["reports"][0];
  CHECK(rep["task"] == "I->T");
  CHECK(rep["bits"] == 8);
  CHECK(rep["pr_curve"].size() == 9);
  CHECK(j["conventions"]["map_cutoff"] == "all");

  // Metrics equal direct library calls on the same codes.
  const Dataset q = load_dataset(s / "query.xmhd");
  const Dataset db = load_dataset(s / "db.xmhd");
  const SimilarityMatrix rel = build_similarity(q.labels(), db.labels());
  const HashCodeMatrix qc = load_codes(s / "q.xmhc");
  const HashCodeMatrix dc = load_codes(s / "db.xmhc");
  CHECK(rep["map"].get<double>() == mean_average_precision(qc, dc, rel).map);
  CHECK(rep["p_at_n"][1]["n"] == 20);
  CHECK(rep["p_at_n"][1]["precision"].get<double>() == precision_at_n(qc, dc, rel, 20));

  const std::string csv = slurp(s / "metrics.csv");
  CHECK(csv.rfind("task,radius,precision,recall\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + 9);

  // Model-driven evaluation in both directions matches the code-file route.
  REQUIRE(xmh_run({"eval", "--query-data", s / "query.xmhd", "--db-data", s / "db.xmhd", "--model",
                   s / "model.xmhm", "--directions", "i2t,t2i", "--out", s / "both.json"})
              .code == 0);
  const auto both = nlohmann::json::parse(slurp(s / "both.json"));
  REQUIRE(both["reports"].size() == 2);
  CHECK(both["reports"][0]["task"] == "I->T");
  CHECK(both["reports"][1]["task"] == "T->I");
  CHECK(both["reports"][0]["map"] == rep["map"]);
}

TEST_CASE("eval of a database against itself finds every query") {
  Scratch s("self");
  make_data(s);
  REQUIRE(xmh_run(train_args(s)).code == 0);
  REQUIRE(xmh_run({"encode", "--model", s / "model.xmhm", "--data", s / "db.xmhd", "--modality", "lab", "--out",
                   s / "l.xmhc"})
              .code == 0);
  REQUIRE(xmh_run({"eval", "--query-data", s / "db.xmhd", "--db-data", s / "db.xmhd", "--query-codes",
                   s / "l.xmhc", "--db-codes", s / "l.xmhc", "--out", s / "self.json"})
              .code == 0);
  const auto j = nlohmann::json::parse(slurp(s / "self.json"));
  CHECK(j["reports"][0]["map"].get<double>() > 0.0);
  CHECK(j["reports"][0]["skipped_queries"] == 0);
  CHECK(j["reports"][0]["pr_curve"][8]["recall"] == 1.0);
}

TEST_CASE("eval rejects inconsistent inputs") {
  Scratch s("evalbad");
  make_data(s);
  REQUIRE(xmh_run(train_args(s)).code == 0);
  REQUIRE(xmh_run({"encode", "--model", s / "model.xmhm", "--data", s / "query.xmhd", "--out", s / "q.xmhc"}).code ==
          0);
  // Query codes used as database codes: size mismatch with the database file.
  CHECK(xmh_run({"eval", "--query-data", s / "query.xmhd", "--db-data", s / "db.xmhd", "--query-codes",
                 s / "q.xmhc", "--db-codes", s / "q.xmhc", "--out", s / "m.json"})
            .code == 3);
  CHECK(xmh_run({"eval", "--query-data", s / "query.xmhd", "--db-data", s / "db.xmhd", "--out", s / "m.json"}).code ==
        2);
  CHECK(xmh_run({"eval", "--query-data", s / "query.xmhd", "--db-data", s / "db.xmhd", "--model", s / "model.xmhm",
                 "--directions", "i2x", "--out", s / "m.json"})
            .code == 2);
}

TEST_CASE("config file values sit between defaults and flags") {
  Scratch s("config");
  {
    std::ofstream f(s / "synth.cfg");
    f << "# synthetic data\n"
      << "n = 25\n"
      << "c = 3\n"
      << "dv = 10\n"
      << "dt = 16   \n\n";
  }
  const Run from_file = xmh_run({"synth", "--config", s / "synth.cfg", "--out", s / "a.xmhd"});
  REQUIRE(from_file.code == 0);
  CHECK(load_dataset(s / "a.xmhd").dims() == DatasetDims{25, 10, 16, 3});

  const Run overridden = xmh_run({"synth", "--config", s / "synth.cfg", "--n", "31", "--out", s / "b.xmhd"});
  REQUIRE(overridden.code == 0);
  CHECK(load_dataset(s / "b.xmhd").dims() == DatasetDims{31, 10, 16, 3});

  CHECK(cli::read_config(s / "synth.cfg") ==
        std::vector<std::string>{"--n", "25", "--c", "3", "--dv", "10", "--dt", "16"});
  {
    std::ofstream f(s / "bad.cfg");
    f << "n 25\n";
  }
  CHECK(xmh_run({"synth", "--config", s / "bad.cfg", "--out", s / "c.xmhd"}).code == 2);
}

TEST_CASE("help lists options with defaults") {
  const Run r = xmh_run({"train", "--help"});
  CHECK(r.code == 0);
  for (const char* needle : {"--epochs", "100", "--alpha", "--eta", "0.0001", "--batch", "128", "--config"}) {
    INFO(needle);
    CHECK(r.out.find(needle) != std::string::npos);
  }
  const Run top = xmh_run({"--help"});
  CHECK(top.code == 0);
  for (const char* sub : {"synth", "train", "encode", "eval"}) CHECK(top.out.find(sub) != std::string::npos);
}

TEST_CASE("installed binary reports exit codes") {
  const std::string bin = XMH_BINARY;
  CHECK(std::system((bin + " --help > /dev/null").c_str()) == 0);
  const int status = std::system((bin + " synth --n 1 --out /dev/null > /dev/null 2>&1").c_str());
  CHECK(WEXITSTATUS(status) == 2);
}
