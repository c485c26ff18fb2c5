#include "decaps_cli/run_config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <utility>
#include <vector>

namespace decaps::cli {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T v{};
  auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || end != text.data() + text.size()) {
    throw std::invalid_argument("config key '" + key + "': cannot parse '" + text + "'");
  }
  return v;
}

bool parse_flag(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1" || text == "yes" || text == "on") return true;
  if (text == "false" || text == "0" || text == "no" || text == "off") return false;
  throw std::invalid_argument("config key '" + key + "': expected true/false, got '" + text + "'");
}

std::string format(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
  if (key == "data_root") data_root = value;
  else if (key == "train_fraction") train_fraction = parse_number<double>(key, value);
  else if (key == "split_seed") split_seed = parse_number<std::uint64_t>(key, value);
  else if (key == "train_list") train_list = value.empty() ? std::nullopt : std::optional<std::filesystem::path>(value);
  else if (key == "test_list") test_list = value.empty() ? std::nullopt : std::optional<std::filesystem::path>(value);
  else if (key == "val_fraction") val_fraction = parse_number<double>(key, value);
  else if (key == "epochs") epochs = parse_number<std::size_t>(key, value);
  else if (key == "output_dir") output_dir = value;
  else if (key == "peekaboo") peekaboo = parse_flag(key, value);
  else if (key == "augment") augment = parse_flag(key, value);
  else if (key == "best_k") best_k = parse_number<std::size_t>(key, value);
  else if (key == "positive_class") positive_class = parse_number<std::size_t>(key, value);
  else if (key == "eval_mode") eval_mode = parse_prediction_mode(value);
  else if (!model.set(key, value)) throw std::invalid_argument("unknown config key '" + key + "'");
}

SplitSpec RunConfig::split() const {
  SplitSpec s;
  s.train_fraction = train_fraction;
  s.seed = split_seed;
  s.train_list = train_list;
  s.test_list = test_list;
  if (!train_list && !test_list && !data_root.empty()) {
    std::error_code ec;
    const auto tr = data_root / "train.txt", te = data_root / "test.txt";
    if (std::filesystem::is_regular_file(tr, ec) && std::filesystem::is_regular_file(te, ec)) {
      s.train_list = tr;
      s.test_list = te;
    }
  }
  return s;
}

std::string RunConfig::to_text() const {
  std::ostringstream os;
  for (const auto& [k, v] : model.to_key_values()) os << k << " = " << v << '\n';
  os << "data_root = " << data_root.string() << '\n';
  os << "train_fraction = " << format(train_fraction) << '\n';
  os << "split_seed = " << split_seed << '\n';
  os << "train_list = " << (train_list ? train_list->string() : "") << '\n';
  os << "test_list = " << (test_list ? test_list->string() : "") << '\n';
  os << "val_fraction = " << format(val_fraction) << '\n';
  os << "epochs = " << epochs << '\n';
  os << "output_dir = " << output_dir.string() << '\n';
  os << "peekaboo = " << (peekaboo ? "true" : "false") << '\n';
  os << "augment = " << (augment ? "true" : "false") << '\n';
  os << "best_k = " << best_k << '\n';
  os << "positive_class = " << positive_class << '\n';
  os << "eval_mode = " << to_string(eval_mode) << '\n';
  return os.str();
}

RunConfig parse_run_config(const std::string& text, const std::string& origin) {
  std::vector<std::tuple<std::size_t, std::string, std::string>> entries;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  bool desk = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
    }
    std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    if (key.empty()) throw std::invalid_argument(origin + ":" + std::to_string(lineno) + ": empty key");
    if (key == "desk_scale") desk = parse_flag(key, value);
    entries.emplace_back(lineno, std::move(key), std::move(value));
  }
  RunConfig cfg;
  if (desk) cfg.model = ModelConfig::desk();
  for (const auto& [n, key, value] : entries) {
    try {
      cfg.set(key, value);
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument(origin + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument(path.string() + ": cannot open config");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str(), path.string());
}

}  // namespace decaps::cli
