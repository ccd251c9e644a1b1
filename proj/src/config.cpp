#include "adpgcn/config.hpp"

#include <charconv>
#include <istream>
#include <ostream>
#include <variant>
#include <vector>

#include "adpgcn/errors.hpp"

namespace adpgcn {

namespace {

static_assert(std::is_same_v<std::size_t, std::uint64_t>, "seed fields are stored as size_t");
using FieldRef = std::variant<std::size_t*, double*, bool*, std::string*>;

std::vector<std::pair<const char*, FieldRef>> fields(ModelConfig& c) {
  return {{"n_nodes", &c.n_nodes},
          {"seq_len", &c.seq_len},
          {"label_len", &c.label_len},
          {"pred_len", &c.pred_len},
          {"d_model", &c.d_model},
          {"n_heads", &c.n_heads},
          {"d_ff", &c.d_ff},
          {"enc_layers_main", &c.enc_layers_main},
          {"enc_layers_aux", &c.enc_layers_aux},
          {"dec_layers", &c.dec_layers},
          {"time_features", &c.time_features},
          {"dropout", &c.dropout},
          {"attention", &c.attention},
          {"use_gcn", &c.use_gcn},
          {"gcn_hidden", &c.gcn.hidden},
          {"gcn_order", &c.gcn.order},
          {"gcn_embed_dim", &c.gcn.embed_dim},
          {"gcn_depth", &c.gcn.depth},
          {"seed", &c.seed}};
}

std::vector<std::pair<const char*, FieldRef>> fields(TrainConfig& c) {
  return {{"lr0", &c.lr0},
          {"epochs", &c.epochs},
          {"patience", &c.patience},
          {"batch_size", &c.batch_size},
          {"adam_beta1", &c.adam.beta1},
          {"adam_beta2", &c.adam.beta2},
          {"adam_eps", &c.adam.eps},
          {"grad_clip", &c.grad_clip},
          {"seed", &c.seed}};
}

std::string render(const FieldRef& ref) {
  return std::visit(
      [](auto* p) -> std::string {
        using T = std::remove_pointer_t<decltype(p)>;
        if constexpr (std::is_same_v<T, double>)
          return format_double(*p);
        else if constexpr (std::is_same_v<T, bool>)
          return *p ? "true" : "false";
        else if constexpr (std::is_same_v<T, std::string>)
          return *p;
        else
          return std::to_string(*p);
      },
      ref);
}

void assign(const FieldRef& ref, const std::string& key, const std::string& value) {
  std::visit(
      [&](auto* p) {
        using T = std::remove_pointer_t<decltype(p)>;
        if constexpr (std::is_same_v<T, double>)
          *p = parse_double(key, value);
        else if constexpr (std::is_same_v<T, bool>)
          *p = parse_bool(key, value);
        else if constexpr (std::is_same_v<T, std::string>)
          *p = value;
        else
          *p = static_cast<T>(parse_uint(key, value));
      },
      ref);
}

template <class Cfg>
KeyValues dump(Cfg cfg, const std::string& section) {
  KeyValues kv;
  for (auto& [name, ref] : fields(cfg)) kv[section + "." + name] = render(ref);
  return kv;
}

template <class Cfg>
bool apply(Cfg& cfg, const std::string& key, const std::string& value) {
  for (auto& [name, ref] : fields(cfg))
    if (key == name) {
      assign(ref, key, value);
      return true;
    }
  return false;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& key, const std::string& text) {
  double v = 0.0;
  const auto t = trim(text);
  auto res = std::from_chars(t.data(), t.data() + t.size(), v);
  if (res.ec != std::errc() || res.ptr != t.data() + t.size())
    throw ConfigError(key, "expected a number, got '" + text + "'");
  return v;
}

std::uint64_t parse_uint(const std::string& key, const std::string& text) {
  std::uint64_t v = 0;
  const auto t = trim(text);
  auto res = std::from_chars(t.data(), t.data() + t.size(), v);
  if (res.ec != std::errc() || res.ptr != t.data() + t.size())
    throw ConfigError(key, "expected a non-negative integer, got '" + text + "'");
  return v;
}

bool parse_bool(const std::string& key, const std::string& text) {
  const auto t = trim(text);
  if (t == "true" || t == "1" || t == "yes" || t == "on") return true;
  if (t == "false" || t == "0" || t == "no" || t == "off") return false;
  throw ConfigError(key, "expected a boolean, got '" + text + "'");
}

ModelConfig ModelConfig::resolved() const {
  ModelConfig out = *this;
  if (out.label_len == 0) out.label_len = out.seq_len >= 96 ? 48 : out.seq_len / 2;
  return out;
}

void ModelConfig::validate() const {
  auto positive = [](std::size_t v, const char* key) {
    if (v == 0) throw ConfigError(key, "must be positive");
  };
  positive(n_nodes, "n_nodes");
  positive(seq_len, "seq_len");
  positive(pred_len, "pred_len");
  positive(d_model, "d_model");
  positive(n_heads, "n_heads");
  positive(d_ff, "d_ff");
  positive(enc_layers_main, "enc_layers_main");
  positive(dec_layers, "dec_layers");
  positive(time_features, "time_features");
  positive(label_len, "label_len");
  if (label_len > seq_len) throw LabelLongerThanInput("label_len", "must not exceed seq_len");
  if (d_model % n_heads != 0) throw ConfigError("n_heads", "must divide d_model");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout", "must lie in [0, 1)");
  if (attention != "full") throw ConfigError("attention", "only 'full' attention is available");
  // Main stack pools between layers; the auxiliary stack sees half the input
  // and pools after each of its layers.
  const std::size_t main_len = seq_len >> (enc_layers_main - 1);
  if (main_len == 0) throw ConfigError("seq_len", "too short for the encoder pooling plan");
  if (enc_layers_aux > 0 && (seq_len >> (enc_layers_aux + 1)) == 0)
    throw ConfigError("seq_len", "too short for the auxiliary encoder stack");
  if (use_gcn) {
    positive(gcn.hidden, "gcn_hidden");
    positive(gcn.embed_dim, "gcn_embed_dim");
    positive(gcn.depth, "gcn_depth");
  }
}

void TrainConfig::validate() const {
  if (!(lr0 > 0.0)) throw ConfigError("lr0", "must be positive");
  if (epochs == 0) throw ConfigError("epochs", "must be positive");
  if (patience == 0) throw ConfigError("patience", "must be positive");
  if (patience > epochs) throw ConfigError("patience", "must not exceed epochs");
  if (batch_size == 0) throw ConfigError("batch_size", "must be positive");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0)) throw ConfigError("adam_beta1", "must lie in [0, 1)");
  if (!(adam.beta2 >= 0.0 && adam.beta2 < 1.0)) throw ConfigError("adam_beta2", "must lie in [0, 1)");
  if (!(adam.eps > 0.0)) throw ConfigError("adam_eps", "must be positive");
  if (!(grad_clip >= 0.0)) throw ConfigError("grad_clip", "must be non-negative");
}

KeyValues to_key_values(const ModelConfig& cfg) { return dump(cfg, "model"); }
KeyValues to_key_values(const TrainConfig& cfg) { return dump(cfg, "train"); }

bool apply_key(ModelConfig& cfg, const std::string& key, const std::string& value) {
  return apply(cfg, key, value);
}
bool apply_key(TrainConfig& cfg, const std::string& key, const std::string& value) {
  return apply(cfg, key, value);
}

KeyValues parse_key_value_text(std::istream& in) {
  KeyValues kv;
  std::string line, section;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("line " + std::to_string(lineno), "unterminated section");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(lineno), "expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    kv[section.empty() ? key : section + "." + key] = trim(line.substr(eq + 1));
  }
  return kv;
}

void write_key_value_text(std::ostream& out, const KeyValues& kv) {
  std::string current;
  bool first = true;
  for (const auto& [full, value] : kv) {
    const auto dot = full.find('.');
    const std::string section = dot == std::string::npos ? "" : full.substr(0, dot);
    const std::string key = dot == std::string::npos ? full : full.substr(dot + 1);
    if (first || section != current) {
      if (!first) out << '\n';
      if (!section.empty()) out << '[' << section << "]\n";
      current = section;
      first = false;
    }
    out << key << " = " << value << '\n';
  }
}

}  // namespace adpgcn
