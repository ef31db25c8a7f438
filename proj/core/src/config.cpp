#include "strokeseg/config.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

namespace strokeseg::config {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

bool parse_bool(const std::string& v, const std::string& key) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("config: bad boolean for '" + key + "': " + v);
}

long long parse_int(const std::string& v, const std::string& key) {
    try {
        size_t pos = 0;
        const long long n = std::stoll(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return n;
    } catch (const std::exception&) {
        throw ConfigError("config: bad integer for '" + key + "': " + v);
    }
}

double parse_float(const std::string& v, const std::string& key) {
    try {
        size_t pos = 0;
        const double x = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw ConfigError("config: bad number for '" + key + "': " + v);
    }
}

std::vector<int> parse_int_list(const std::string& v, const std::string& key) {
    std::vector<int> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(static_cast<int>(parse_int(trim(item), key)));
    return out;
}

std::string widths_to_text(const std::vector<int>& w) {
    std::ostringstream os;
    for (size_t i = 0; i < w.size(); ++i) os << (i ? "," : "") << w[i];
    return os.str();
}

std::string float_to_text(double v) {
    std::ostringstream os;
    os.precision(12);
    os << v;
    return os.str();
}

}  // namespace

RunConfig parse_run_config(const std::string& text) {
    RunConfig rc;
    std::istringstream in(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#' || t[0] == ';') continue;
        if (t.front() == '[') {
            if (t.back() != ']') throw ConfigError("config line " + std::to_string(lineno) +
                                                   ": unterminated section header");
            section = trim(t.substr(1, t.size() - 2));
            if (section != "data" && section != "model" && section != "train" &&
                section != "output")
                throw ConfigError("config: unknown section [" + section + "]");
            continue;
        }
        const auto eq = t.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) + ": expected key=value");
        const std::string key = trim(t.substr(0, eq));
        const std::string value = trim(t.substr(eq + 1));
        const std::string qual = section + "." + key;

        auto& tc = rc.train;
        if (qual == "data.root") rc.data_root = value;
        else if (qual == "data.manifest") rc.manifest = value;
        else if (qual == "model.widths") tc.model.encoder_widths = parse_int_list(value, qual);
        else if (qual == "model.batch_norm") tc.model.batch_norm = parse_bool(value, qual);
        else if (qual == "train.ablation") tc.ablation = training::parse_ablation(value);
        else if (qual == "train.epochs") tc.epochs = static_cast<int>(parse_int(value, qual));
        else if (qual == "train.batch_size") tc.batch_size = static_cast<int>(parse_int(value, qual));
        else if (qual == "train.lr_segmenter") tc.lr_segmenter = static_cast<float>(parse_float(value, qual));
        else if (qual == "train.lr_discriminators") tc.lr_discriminators = static_cast<float>(parse_float(value, qual));
        else if (qual == "train.lambda_ce") tc.loss_weights.ce = static_cast<float>(parse_float(value, qual));
        else if (qual == "train.lambda_ls") tc.loss_weights.ls = static_cast<float>(parse_float(value, qual));
        else if (qual == "train.lambda_bd") tc.loss_weights.bd = static_cast<float>(parse_float(value, qual));
        else if (qual == "train.lambda_adv") tc.loss_weights.adv = static_cast<float>(parse_float(value, qual));
        else if (qual == "train.seed") tc.seed = static_cast<std::uint64_t>(parse_int(value, qual));
        else if (qual == "train.device") tc.device = value;
        else if (qual == "train.checkpoint_dir") tc.checkpoint_dir = value;
        else if (qual == "train.boundary_factor") tc.boundary_factor = static_cast<float>(parse_float(value, qual));
        else if (qual == "train.boundary_iterations") tc.boundary_iterations = static_cast<int>(parse_int(value, qual));
        else if (qual == "train.disc_base_width") tc.disc_base_width = static_cast<int>(parse_int(value, qual));
        else if (qual == "train.disc_downsamples") tc.disc_downsamples = static_cast<int>(parse_int(value, qual));
        else if (qual == "train.val_interval") tc.val_interval = static_cast<int>(parse_int(value, qual));
        else if (qual == "train.drop_empty_slices") tc.drop_empty_slices = parse_bool(value, qual);
        else if (qual == "train.inclusive_penumbra") tc.inclusive_penumbra = parse_bool(value, qual);
        else if (qual == "train.folds") rc.folds = static_cast<int>(parse_int(value, qual));
        else if (qual == "train.fold_seed") rc.fold_seed = static_cast<std::uint64_t>(parse_int(value, qual));
        else if (qual == "output.dir") rc.output_dir = value;
        else throw ConfigError("config: unknown key '" + qual + "'");
    }
    return rc;
}

RunConfig load_run_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_run_config(ss.str());
}

std::string RunConfig::to_text() const {
    std::ostringstream os;
    os << "[data]\n";
    os << "root = " << data_root.string() << "\n";
    os << "manifest = " << manifest.string() << "\n";
    os << "\n[model]\n";
    os << "widths = " << widths_to_text(train.model.encoder_widths) << "\n";
    os << "batch_norm = " << (train.model.batch_norm ? "true" : "false") << "\n";
    os << "\n[train]\n";
    os << "ablation = " << training::ablation_name(train.ablation) << "\n";
    os << "epochs = " << train.epochs << "\n";
    os << "batch_size = " << train.batch_size << "\n";
    os << "lr_segmenter = " << float_to_text(train.lr_segmenter) << "\n";
    os << "lr_discriminators = " << float_to_text(train.lr_discriminators) << "\n";
    os << "lambda_ce = " << float_to_text(train.loss_weights.ce) << "\n";
    os << "lambda_ls = " << float_to_text(train.loss_weights.ls) << "\n";
    os << "lambda_bd = " << float_to_text(train.loss_weights.bd) << "\n";
    os << "lambda_adv = " << float_to_text(train.loss_weights.adv) << "\n";
    os << "seed = " << train.seed << "\n";
    os << "device = " << train.device << "\n";
    os << "checkpoint_dir = " << train.checkpoint_dir.string() << "\n";
    os << "boundary_factor = " << float_to_text(train.boundary_factor) << "\n";
    os << "boundary_iterations = " << train.boundary_iterations << "\n";
    os << "disc_base_width = " << train.disc_base_width << "\n";
    os << "disc_downsamples = " << train.disc_downsamples << "\n";
    os << "val_interval = " << train.val_interval << "\n";
    os << "drop_empty_slices = " << (train.drop_empty_slices ? "true" : "false") << "\n";
    os << "inclusive_penumbra = " << (train.inclusive_penumbra ? "true" : "false") << "\n";
    os << "folds = " << folds << "\n";
    os << "fold_seed = " << fold_seed << "\n";
    os << "\n[output]\n";
    os << "dir = " << output_dir.string() << "\n";
    return os.str();
}

fs::path RunConfig::manifest_path() const {
    if (manifest.is_absolute()) return manifest;
    return data_root / manifest;
}

void RunConfig::resolve_and_check_paths() {
    if (data_root.empty()) {
        if (const char* env = std::getenv("STROKESEG_DATA_ROOT")) data_root = env;
    }
    if (data_root.empty())
        throw ConfigError("no data root: set [data] root or STROKESEG_DATA_ROOT");
    if (!fs::is_directory(data_root))
        throw ConfigError("data root is not a directory: " + data_root.string());
    if (manifest.empty()) throw ConfigError("no manifest configured");
    if (!fs::exists(manifest_path()))
        throw ConfigError("manifest not found: " + manifest_path().string());
    if (folds < 2) throw ConfigError("folds must be >= 2");
}

}  // namespace strokeseg::config
