#include <sstream>

#include "seqvcr/train.hpp"

namespace seqvcr {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

std::size_t parse_size(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  long long x = 0;
  try {
    x = std::stoll(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || x < 0) throw std::invalid_argument(key + ": expected a nonnegative integer, got '" + v + "'");
  return static_cast<std::size_t>(x);
}

double parse_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double x = 0.0;
  try {
    x = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size()) throw std::invalid_argument(key + ": expected a number, got '" + v + "'");
  return x;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::invalid_argument(key + ": expected true or false, got '" + v + "'");
}

}  // namespace

const std::vector<std::string>& TrainConfig::keys() {
  static const std::vector<std::string> k = {
      "variant", "task", "learning_rate", "batch_size", "epochs", "lambda1", "lambda2", "eta", "cov_mode",
      "reg_layer", "include_pause_positions", "d_model", "n_layers", "n_heads", "max_seq_len", "dropout",
      "proj_dim", "seed", "eval_every", "log_every", "checkpoint_every", "grad_clip", "weight_decay", "beta1",
      "beta2", "adam_eps", "pauses", "eval_size", "max_steps"};
  return k;
}

void TrainConfig::set(const std::string& key, const std::string& raw) {
  const std::string v = trim(raw);
  if (key == "variant") variant = variant_from_string(v);
  else if (key == "task") task = task_kind_from_string(v);
  else if (key == "learning_rate") learning_rate = parse_double(key, v);
  else if (key == "batch_size") batch_size = parse_size(key, v);
  else if (key == "epochs") epochs = parse_size(key, v);
  else if (key == "lambda1") reg.lambda1 = parse_double(key, v);
  else if (key == "lambda2") reg.lambda2 = parse_double(key, v);
  else if (key == "eta") reg.eta = parse_double(key, v);
  else if (key == "cov_mode") reg.cov_mode = cov_mode_from_string(v);
  else if (key == "reg_layer") reg.reg_layer = v == "final" ? kFinalLayer : parse_size(key, v);
  else if (key == "include_pause_positions") reg.include_pause_positions = parse_bool(key, v);
  else if (key == "d_model") model.d_model = parse_size(key, v);
  else if (key == "n_layers") model.n_layers = parse_size(key, v);
  else if (key == "n_heads") model.n_heads = parse_size(key, v);
  else if (key == "max_seq_len") model.max_seq_len = parse_size(key, v);
  else if (key == "dropout") model.dropout_p = parse_double(key, v);
  else if (key == "proj_dim") model.proj_dim = parse_size(key, v);
  else if (key == "seed") seed = parse_size(key, v);
  else if (key == "eval_every") eval_every = parse_size(key, v);
  else if (key == "log_every") log_every = parse_size(key, v);
  else if (key == "checkpoint_every") checkpoint_every = parse_size(key, v);
  else if (key == "grad_clip") grad_clip = parse_double(key, v);
  else if (key == "weight_decay") weight_decay = parse_double(key, v);
  else if (key == "beta1") beta1 = parse_double(key, v);
  else if (key == "beta2") beta2 = parse_double(key, v);
  else if (key == "adam_eps") adam_eps = parse_double(key, v);
  else if (key == "pauses") pauses = parse_size(key, v);
  else if (key == "eval_size") eval_size = parse_size(key, v);
  else if (key == "max_steps") max_steps = parse_size(key, v);
  else throw std::invalid_argument("unknown config key '" + key + "'");
}

void TrainConfig::apply_text(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key=value, got '" + line + "'");
    }
    set(trim(line.substr(0, eq)), line.substr(eq + 1));
  }
}

std::string TrainConfig::to_text() const {
  std::ostringstream s;
  s.precision(17);
  s << "variant=" << to_string(variant) << '\n'
    << "task=" << to_string(task) << '\n'
    << "learning_rate=" << learning_rate << '\n'
    << "batch_size=" << batch_size << '\n'
    << "epochs=" << epochs << '\n'
    << "lambda1=" << reg.lambda1 << '\n'
    << "lambda2=" << reg.lambda2 << '\n'
    << "eta=" << reg.eta << '\n'
    << "cov_mode=" << to_string(reg.cov_mode) << '\n'
    << "reg_layer=" << (reg.reg_layer == kFinalLayer ? std::string("final") : std::to_string(reg.reg_layer)) << '\n'
    << "include_pause_positions=" << (reg.include_pause_positions ? "true" : "false") << '\n'
    << "d_model=" << model.d_model << '\n'
    << "n_layers=" << model.n_layers << '\n'
    << "n_heads=" << model.n_heads << '\n'
    << "max_seq_len=" << model.max_seq_len << '\n'
    << "dropout=" << model.dropout_p << '\n'
    << "proj_dim=" << model.proj_dim << '\n'
    << "seed=" << seed << '\n'
    << "eval_every=" << eval_every << '\n'
    << "log_every=" << log_every << '\n'
    << "checkpoint_every=" << checkpoint_every << '\n'
    << "grad_clip=" << grad_clip << '\n'
    << "weight_decay=" << weight_decay << '\n'
    << "beta1=" << beta1 << '\n'
    << "beta2=" << beta2 << '\n'
    << "adam_eps=" << adam_eps << '\n'
    << "pauses=" << pauses << '\n'
    << "eval_size=" << eval_size << '\n'
    << "max_steps=" << max_steps << '\n';
  return s.str();
}

void TrainConfig::validate() const {
  reg.validate();
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be positive");
  if (batch_size == 0) throw std::invalid_argument("batch_size must be positive");
  if (epochs == 0 && max_steps == 0) throw std::invalid_argument("nothing to train: epochs and max_steps are both 0");
  if (log_every == 0) throw std::invalid_argument("log_every must be positive");
  if (reg.enabled() && !uses_reg(variant)) {
    throw std::invalid_argument("variant " + to_string(variant) + " does not use the regularizer; set lambda1=lambda2=0");
  }
  if (reg.enabled() && batch_size < 2) throw std::invalid_argument("the regularizer needs batch_size >= 2");
  if (reg.reg_layer != kFinalLayer && reg.reg_layer > model.n_layers) {
    throw std::invalid_argument("reg_layer " + std::to_string(reg.reg_layer) + " exceeds n_layers " +
                                std::to_string(model.n_layers));
  }
  if (!uses_pause(variant) && pauses != 0) {
    throw std::invalid_argument("variant " + to_string(variant) + " takes no pause tokens; set pauses=0");
  }
  if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) throw std::invalid_argument("Adam betas must lie in [0, 1)");
  if (!(adam_eps > 0.0)) throw std::invalid_argument("adam_eps must be positive");
  if (weight_decay < 0.0 || grad_clip < 0.0) throw std::invalid_argument("weight_decay and grad_clip must be nonnegative");
}

TrainConfig make_variant(Variant v, TaskKind task) {
  TrainConfig c;
  c.variant = v;
  c.task = task;
  c.learning_rate = 1e-4;
  c.epochs = 100;
  c.batch_size = task == TaskKind::Multiplication ? 32 : 128;
  if (uses_reg(v)) {
    c.reg.lambda1 = task == TaskKind::Multiplication ? 1.0 : 0.1;
    c.reg.lambda2 = task == TaskKind::Multiplication ? 0.004 : 0.5;
  }
  c.pauses = uses_pause(v) ? 2 : 0;
  return c;
}

}  // namespace seqvcr
