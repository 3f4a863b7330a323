#include "cli.hpp"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "json.hpp"
#include "xmh/datamodel.hpp"
#include "xmh/errors.hpp"
#include "xmh/networks.hpp"
#include "xmh/retrieval.hpp"
#include "xmh/trainer.hpp"

namespace xmh::cli {
namespace fs = std::filesystem;
namespace {

// Raised for bad flag values detected after parsing.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void require_readable(const std::string& path, const char* flag) {
  if (!fs::is_regular_file(path)) throw UsageError(std::string(flag) + ": no such file '" + path + "'");
}

void require_writable(const std::string& path, const char* flag) {
  if (path.empty()) throw UsageError(std::string(flag) + " is required");
  const fs::path parent = fs::absolute(path).parent_path();
  if (!fs::is_directory(parent)) {
    throw UsageError(std::string(flag) + ": directory '" + parent.string() + "' does not exist");
  }
}

std::size_t default_threads() {
  if (const char* env = std::getenv("XMH_THREADS")) {
    try {
      const long v = std::stol(env);
      if (v > 0) return static_cast<std::size_t>(v);
    } catch (const std::exception&) {
    }
  }
  return std::max(1U, std::thread::hardware_concurrency());
}

// Inserts config-file settings for every flag the command line does not set.
std::vector<std::string> expand_config(std::vector<std::string> args) {
  auto it = std::find(args.begin(), args.end(), "--config");
  if (it == args.end()) return args;
  if (std::next(it) == args.end()) throw UsageError("--config needs a path");
  const std::string path = *std::next(it);
  args.erase(it, std::next(it, 2));
  const auto extra = read_config(path);
  std::vector<std::string> merged(args.begin(), args.begin() + 1);
  for (std::size_t i = 0; i + 1 < extra.size(); i += 2) {
    const bool on_command_line = std::any_of(args.begin(), args.end(), [&](const std::string& a) {
      return a == extra[i] || a.rfind(extra[i] + "=", 0) == 0;
    });
    if (!on_command_line) {
      merged.push_back(extra[i]);
      merged.push_back(extra[i + 1]);
    }
  }
  merged.insert(merged.end(), args.begin() + 1, args.end());
  return merged;
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  SynthOptions options;
  std::size_t query_n = 0;
  std::string out;
  std::string query_out;
};

int cmd_synth(const SynthArgs& a, std::ostream& out) {
  require_writable(a.out, "--out");
  if (a.query_n > 0) require_writable(a.query_out, "--query-out");
  if (a.query_n > 0 && a.query_n < 2) throw UsageError("--query-n must be 0 or at least 2");

  if (a.options.image_dim < a.options.classes || a.options.text_dim < a.options.classes) {
    throw UsageError("--dv and --dt must be at least --c");
  }
  SynthOptions o = a.options;
  o.n += a.query_n;
  const Dataset all = synth_dataset(o);
  const Dataset train = a.query_n > 0 ? slice_dataset(all, 0, a.options.n) : all;
  save_dataset(train, a.out);
  if (a.query_n > 0) save_dataset(slice_dataset(all, a.options.n, o.n), a.query_out);

  const DatasetDims d = train.dims();
  std::map<std::size_t, std::size_t> histogram;
  for (std::size_t i = 0; i < train.size(); ++i) {
    const auto row = train.labels().row(i);
    ++histogram[static_cast<std::size_t>(std::count(row.begin(), row.end(), 1))];
  }
  out << "wrote " << a.out << ": n=" << d.n << " d_v=" << d.image_dim << " d_t=" << d.text_dim
      << " c=" << d.classes << "\nlabel cardinality:";
  for (const auto& [k, count] : histogram) out << " " << k << ":" << count;
  out << "\n";
  if (a.query_n > 0) out << "wrote " << a.query_out << ": n=" << a.query_n << "\n";
  return kOk;
}

struct TrainArgs {
  TrainConfig config;
  std::string data;
  std::string out;
  std::string log;
};

int cmd_train(const TrainArgs& a, std::ostream& out) {
  require_readable(a.data, "--data");
  require_writable(a.out, "--out");
  if (!a.log.empty()) require_writable(a.log, "--log");
  try {
    a.config.validate();
  } catch (const ContractError& e) {
    throw UsageError(e.what());
  }

  const Dataset data = load_dataset(a.data);
  std::ofstream log_file;
  std::ostream* log = &out;
  if (!a.log.empty()) {
    log_file.open(a.log, std::ios::trunc);
    log = &log_file;
  }
  const TrainState state = train(data, a.config, [log](const EpochRecord& r) {
    *log << epoch_json(r) << "\n";
    log->flush();
  });
  save_model(state.model, a.out);
  return kOk;
}

struct EncodeArgs {
  std::string model;
  std::string data;
  std::string modality = "img";
  std::string out;
};

int cmd_encode(const EncodeArgs& a, std::ostream& out) {
  require_readable(a.model, "--model");
  require_readable(a.data, "--data");
  require_writable(a.out, "--out");
  Modality modality;
  try {
    modality = parse_modality(a.modality);
  } catch (const ContractError& e) {
    throw UsageError(e.what());
  }
  const Model model = load_model(a.model);
  const Dataset data = load_dataset(a.data);
  const HashCodeMatrix codes = encode(model, modality, data);
  save_codes(codes, a.out);
  out << "wrote " << a.out << ": m=" << codes.size() << " K=" << codes.bits() << " modality "
      << modality_name(modality) << "\n";
  return kOk;
}

struct EvalArgs {
  std::string query_data;
  std::string db_data;
  std::string query_codes;
  std::string db_codes;
  std::string model;
  std::vector<std::string> directions;
  std::string name = "query->db";
  std::vector<std::size_t> p_at_n;
  std::size_t top_r = 0;
  std::size_t threads = 0;
  std::string out;
  std::string csv;
};

struct EvalDirection {
  std::string task;
  Modality query;
  Modality db;
};

EvalDirection parse_direction(const std::string& text) {
  auto letter = [&](char c) {
    switch (c) {
      case 'i': return Modality::kImage;
      case 't': return Modality::kText;
      case 'l': return Modality::kLabel;
      default: throw UsageError("bad direction '" + text + "' (expected e.g. i2t, t2i, l2i)");
    }
  };
  if (text.size() != 3 || text[1] != '2') throw UsageError("bad direction '" + text + "'");
  auto upper = [](char c) { return static_cast<char>(std::toupper(static_cast<unsigned char>(c))); };
  return {std::string(1, upper(text[0])) + "->" + std::string(1, upper(text[2])), letter(text[0]),
          letter(text[2])};
}

nlohmann::json report_json(const std::string& task, const HashCodeMatrix& q, const HashCodeMatrix& db,
                           const RetrievalResult& r) {
  nlohmann::json p_at_n = nlohmann::json::array();
  for (const auto& [n, p] : r.precision_at) p_at_n.push_back({{"n", n}, {"precision", p}});
  nlohmann::json pr = nlohmann::json::array();
  for (const PrPoint& p : r.pr_curve) {
    pr.push_back({{"radius", p.radius}, {"precision", p.precision}, {"recall", p.recall}});
  }
  return {{"task", task},
          {"queries", q.size()},
          {"database", db.size()},
          {"bits", db.bits()},
          {"map", r.map},
          {"skipped_queries", r.skipped_queries},
          {"p_at_n", p_at_n},
          {"pr_curve", pr}};
}

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  require_readable(a.query_data, "--query-data");
  require_readable(a.db_data, "--db-data");
  require_writable(a.out, "--out");
  const bool from_codes = !a.query_codes.empty() || !a.db_codes.empty();
  if (from_codes == !a.model.empty()) {
    throw UsageError("give either --query-codes and --db-codes, or --model with --directions");
  }
  if (from_codes) {
    require_readable(a.query_codes, "--query-codes");
    require_readable(a.db_codes, "--db-codes");
  } else {
    require_readable(a.model, "--model");
  }
  std::vector<EvalDirection> directions;
  for (const auto& d : a.directions) directions.push_back(parse_direction(d));
  if (!from_codes && directions.empty()) throw UsageError("--directions is required with --model");
  const std::string csv_path = a.csv.empty() ? fs::path(a.out).replace_extension(".csv").string() : a.csv;
  require_writable(csv_path, "--csv");

  const Dataset query_data = load_dataset(a.query_data);
  const Dataset db_data = load_dataset(a.db_data);
  const SimilarityMatrix relevance = build_similarity(query_data.labels(), db_data.labels());

  EvalOptions options;
  if (a.top_r > 0) options.top_r = a.top_r;
  options.threads = a.threads > 0 ? a.threads : default_threads();

  std::vector<std::tuple<std::string, HashCodeMatrix, HashCodeMatrix>> tasks;
  if (from_codes) {
    tasks.emplace_back(a.name, load_codes(a.query_codes), load_codes(a.db_codes));
  } else {
    const Model model = load_model(a.model);
    for (const EvalDirection& d : directions) {
      tasks.emplace_back(d.task, encode(model, d.query, query_data), encode(model, d.db, db_data));
    }
  }

  nlohmann::json reports = nlohmann::json::array();
  std::ostringstream csv;
  csv << "task,radius,precision,recall\n";
  csv << std::setprecision(17);
  for (const auto& [task, q, db] : tasks) {
    if (q.size() != query_data.size()) throw FormatError("query codes do not match the query dataset size");
    if (db.size() != db_data.size()) throw FormatError("database codes do not match the database size");
    options.p_at_n = a.p_at_n;
    if (options.p_at_n.empty()) {
      for (std::size_t n : {10, 50, 100, 500, 1000}) {
        if (n <= db.size()) options.p_at_n.push_back(n);
      }
    }
    for (std::size_t n : options.p_at_n) {
      if (n == 0 || n > db.size()) throw UsageError("--p-at-n value " + std::to_string(n) + " exceeds the database");
    }
    const RetrievalResult r = evaluate_retrieval(q, db, relevance, options);
    reports.push_back(report_json(task, q, db, r));
    for (const PrPoint& p : r.pr_curve) {
      csv << task << "," << p.radius << "," << p.precision << "," << p.recall << "\n";
    }
    out << task << ": MAP " << std::fixed << std::setprecision(4) << r.map << std::defaultfloat
        << " (skipped " << r.skipped_queries << ")\n";
  }

  const nlohmann::json doc = {
      {"conventions",
       {{"ranking", "ascending Hamming distance, ties by database index"},
        {"map_cutoff", a.top_r > 0 ? nlohmann::json(a.top_r) : nlohmann::json("all")},
        {"empty_retrieval_precision", 1.0},
        {"skipped_queries", "queries with no relevant database item are excluded from MAP and PR"}}},
      {"reports", reports}};
  {
    std::ofstream f(a.out, std::ios::trunc);
    f << doc.dump(2) << "\n";
    if (!f) throw FormatError("write failed for " + a.out);
  }
  {
    std::ofstream f(csv_path, std::ios::trunc);
    f << csv.str();
    if (!f) throw FormatError("write failed for " + csv_path);
  }
  return kOk;
}

}  // namespace

std::vector<std::string> read_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read config file '" + path + "'");
  std::vector<std::string> out;
  std::string line;
  std::size_t number = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++number;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw UsageError(path + ":" + std::to_string(number) + ": expected 'key = value'");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw UsageError(path + ":" + std::to_string(number) + ": empty key");
    out.push_back("--" + key);
    out.push_back(value);
  }
  return out;
}

int run(const std::vector<std::string>& raw_args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Self-supervised adversarial cross-modal hashing", "xmh"};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Generate a synthetic cross-modal dataset");
  s->add_option("--n", synth.options.n, "Number of instances")->check(CLI::Range(std::size_t{2}, std::size_t{1} << 30));
  s->add_option("--c", synth.options.classes, "Number of classes")->check(CLI::Range(std::size_t{2}, std::size_t{1} << 16));
  s->add_option("--dv", synth.options.image_dim, "Image feature dimension")->check(CLI::PositiveNumber);
  s->add_option("--dt", synth.options.text_dim, "Text (bag-of-words) dimension")->check(CLI::PositiveNumber);
  s->add_option("--noise", synth.options.noise, "Gaussian noise scale")->check(CLI::NonNegativeNumber);
  s->add_option("--seed", synth.options.seed, "Random seed");
  s->add_option("--query-n", synth.query_n, "Extra held-out instances written to --query-out");
  s->add_option("--query-out", synth.query_out, "Output path for held-out instances");
  s->add_option("--out", synth.out, "Output dataset path (.xmhd)")->required();

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train all five networks");
  t->add_option("--data", tr.data, "Training dataset (.xmhd)")->required();
  t->add_option("--out", tr.out, "Checkpoint path (.xmhm)")->required();
  t->add_option("--log", tr.log, "JSON-lines epoch log (default: stdout)");
  t->add_option("--k", tr.config.code_length, "Code length K")->check(CLI::PositiveNumber);
  t->add_option("--epochs", tr.config.epochs, "Maximum epochs T_max");
  t->add_option("--alpha", tr.config.hyper.alpha, "Weight of the semantic-feature likelihood");
  t->add_option("--gamma", tr.config.hyper.gamma, "Weight of the hash-output likelihood");
  t->add_option("--eta", tr.config.hyper.eta, "Weight of the quantization loss");
  t->add_option("--beta", tr.config.hyper.beta, "Weight of the label-prediction loss");
  t->add_option("--lr", tr.config.lr, "SGD learning rate");
  t->add_option("--batch", tr.config.batch_size, "Minibatch size")->check(CLI::PositiveNumber);
  t->add_option("--seed", tr.config.seed, "Random seed");
  t->add_option("--width-factor", tr.config.width_factor, "Scale of the 4096-unit hidden layers")
      ->check(CLI::PositiveNumber);
  t->add_option("--inner-iters", tr.config.inner_iters, "Discriminator passes per epoch")
      ->check(CLI::PositiveNumber);

  EncodeArgs en;
  auto* e = app.add_subcommand("encode", "Encode a dataset split to binary codes");
  e->add_option("--model", en.model, "Checkpoint (.xmhm)")->required();
  e->add_option("--data", en.data, "Dataset (.xmhd)")->required();
  e->add_option("--modality", en.modality, "img | txt | lab");
  e->add_option("--out", en.out, "Codes path (.xmhc)")->required();

  EvalArgs ev;
  auto* v = app.add_subcommand("eval", "Hamming-ranking and hash-lookup evaluation");
  v->add_option("--query-data", ev.query_data, "Query dataset (labels, and inputs with --model)")->required();
  v->add_option("--db-data", ev.db_data, "Database dataset")->required();
  v->add_option("--query-codes", ev.query_codes, "Query codes (.xmhc)");
  v->add_option("--db-codes", ev.db_codes, "Database codes (.xmhc)");
  v->add_option("--name", ev.name, "Task name for a codes-file evaluation");
  v->add_option("--model", ev.model, "Checkpoint to encode queries and database on the fly");
  v->add_option("--directions", ev.directions, "Comma-separated tasks, e.g. i2t,t2i")->delimiter(',');
  v->add_option("--p-at-n", ev.p_at_n, "Comma-separated P@n cutoffs")->delimiter(',');
  v->add_option("--top-r", ev.top_r, "MAP rank cutoff (0 = full ranking)");
  v->add_option("--threads", ev.threads, "Worker threads (0 = XMH_THREADS or all cores)");
  v->add_option("--out", ev.out, "Metrics JSON path")->required();
  v->add_option("--csv", ev.csv, "PR-curve CSV path (default: --out with .csv)");

  // Consumed by expand_config; registered so --help lists it.
  std::string config_path;
  for (CLI::App* sub : {s, t, e, v}) {
    sub->add_option("--config", config_path, "key = value file; command-line flags take precedence");
  }

  try {
    std::vector<std::string> args = expand_config(raw_args);
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::ParseError& ex) {
    const int code = app.exit(ex, out, err);
    return code == 0 ? kOk : kUsage;
  } catch (const UsageError& ex) {
    err << "usage error: " << ex.what() << "\n";
    return kUsage;
  }

  try {
    if (*s) return cmd_synth(synth, out);
    if (*t) return cmd_train(tr, out);
    if (*e) return cmd_encode(en, out);
    if (*v) return cmd_eval(ev, out);
  } catch (const UsageError& ex) {
    err << "usage error: " << ex.what() << "\n";
    return kUsage;
  } catch (const DivergenceError& ex) {
    err << "diverged: " << ex.what() << "\n";
    return kDiverged;
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << "\n";
    return kDataError;
  }
  return kUsage;
}

}  // namespace xmh::cli
