#include "tensorf/runconfig.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace tensorf {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

[[noreturn]] void fail(const std::string& source, int line, const std::string& what) {
    throw std::runtime_error(source + ":" + std::to_string(line) + ": " + what);
}

std::vector<std::string> split_list(const std::string& value) {
    std::string normalized = value;
    std::replace(normalized.begin(), normalized.end(), ',', ' ');
    std::istringstream ss(normalized);
    std::vector<std::string> out;
    std::string tok;
    while (ss >> tok) out.push_back(tok);
    return out;
}

struct Parser {
    const std::string& source;
    int line = 0;

    long long to_int(const std::string& key, const std::string& v) const {
        long long out = 0;
        const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
        if (res.ec != std::errc{} || res.ptr != v.data() + v.size())
            fail(source, line, "key \"" + key + "\": expected an integer, got \"" + v + "\"");
        return out;
    }

    double to_double(const std::string& key, const std::string& v) const {
        try {
            std::size_t used = 0;
            const double out = std::stod(v, &used);
            if (used != v.size()) throw std::invalid_argument(v);
            return out;
        } catch (const std::exception&) {
            fail(source, line, "key \"" + key + "\": expected a number, got \"" + v + "\"");
        }
    }

    bool to_bool(const std::string& key, const std::string& v) const {
        if (v == "true" || v == "1") return true;
        if (v == "false" || v == "0") return false;
        fail(source, line, "key \"" + key + "\": expected true or false, got \"" + v + "\"");
    }

    Vec3i to_vec3i(const std::string& key, const std::string& v) const {
        const auto parts = split_list(v);
        if (parts.size() != 3)
            fail(source, line, "key \"" + key + "\": expected three integers, got \"" + v + "\"");
        return {static_cast<int>(to_int(key, parts[0])), static_cast<int>(to_int(key, parts[1])),
                static_cast<int>(to_int(key, parts[2]))};
    }

    std::vector<int> to_int_list(const std::string& key, const std::string& v) const {
        std::vector<int> out;
        for (const auto& part : split_list(v)) out.push_back(static_cast<int>(to_int(key, part)));
        return out;
    }

    BBoxd to_bbox(const std::string& key, const std::string& v) const {
        const auto parts = split_list(v);
        if (parts.size() != 6)
            fail(source, line, "key \"" + key + "\": expected six numbers, got \"" + v + "\"");
        BBoxd box;
        for (int a = 0; a < 3; ++a) {
            box.min[a] = to_double(key, parts[static_cast<std::size_t>(a)]);
            box.max[a] = to_double(key, parts[static_cast<std::size_t>(a + 3)]);
        }
        return box;
    }
};

}  // namespace

RunConfig parse_run_config(std::istream& in, const std::string& source_name) {
    RunConfig cfg;
    Parser p{source_name};

    std::string raw;
    while (std::getline(in, raw)) {
        ++p.line;
        std::string text = raw;
        if (const auto hash = text.find('#'); hash != std::string::npos) text = text.substr(0, hash);
        text = trim(text);
        if (text.empty()) continue;
        const auto eq = text.find('=');
        if (eq == std::string::npos)
            fail(source_name, p.line, "expected key=value, got \"" + trim(raw) + "\"");
        const std::string key = trim(text.substr(0, eq));
        const std::string value = trim(text.substr(eq + 1));
        if (key.empty()) fail(source_name, p.line, "empty key");

        TrainConfig& t = cfg.train;
        if (key == "dataset") cfg.dataset = value;
        else if (key == "preset") {
            try {
                const std::uint64_t seed = t.seed;
                const bool det = t.deterministic;
                t = preset(value);
                t.seed = seed;
                t.deterministic = det;
            } catch (const std::exception& e) {
                fail(source_name, p.line, e.what());
            }
            cfg.preset_name = value;
        }
        else if (key == "out") cfg.out = value;
        else if (key == "seed") t.seed = static_cast<std::uint64_t>(p.to_int(key, value));
        else if (key == "deterministic") t.deterministic = p.to_bool(key, value);
        else if (key == "mode") {
            if (value == "vm") t.mode = FieldMode::VM;
            else if (value == "cp") t.mode = FieldMode::CP;
            else fail(source_name, p.line, "key \"mode\": expected vm or cp, got \"" + value + "\"");
        }
        else if (key == "decoder") {
            try {
                t.decoder = decoder_kind_from_name(value);
            } catch (const std::exception& e) {
                fail(source_name, p.line, e.what());
            }
        }
        else if (key == "density_ranks") t.ranks.density = p.to_vec3i(key, value);
        else if (key == "appearance_ranks") t.ranks.appearance = p.to_vec3i(key, value);
        else if (key == "feature_count") t.feature_count = static_cast<int>(p.to_int(key, value));
        else if (key == "batch_size") t.batch_size = static_cast<int>(p.to_int(key, value));
        else if (key == "total_steps") t.total_steps = static_cast<int>(p.to_int(key, value));
        else if (key == "n0") t.n0 = static_cast<int>(p.to_int(key, value));
        else if (key == "final_n") t.final_n = static_cast<int>(p.to_int(key, value));
        else if (key == "upsample_steps") t.upsample_steps = p.to_int_list(key, value);
        else if (key == "occupancy_steps") t.occupancy_steps = p.to_int_list(key, value);
        else if (key == "bbox_shrink_step") t.bbox_shrink_step = static_cast<int>(p.to_int(key, value));
        else if (key == "reg") {
            try {
                t.loss.reg = reg_kind_from_name(value);
            } catch (const std::exception& e) {
                fail(source_name, p.line, e.what());
            }
        }
        else if (key == "reg_weight") t.loss.weight = p.to_double(key, value);
        else if (key == "tv_appearance_scale") t.loss.tv_appearance_scale = p.to_double(key, value);
        else if (key == "tv_squared") t.loss.tv_squared = p.to_bool(key, value);
        else if (key == "lr_factors") t.lr_factors = p.to_double(key, value);
        else if (key == "lr_decoder") t.lr_decoder = p.to_double(key, value);
        else if (key == "lr_final_factor") t.lr_final_factor = p.to_double(key, value);
        else if (key == "density_shift") t.density_shift = p.to_double(key, value);
        else if (key == "occupancy_alpha_threshold")
            t.occupancy_alpha_threshold = p.to_double(key, value);
        else if (key == "alpha_cutoff") t.alpha_cutoff = p.to_double(key, value);
        else if (key == "termination_tau") t.termination_tau = p.to_double(key, value);
        else if (key == "max_samples") t.max_samples = static_cast<int>(p.to_int(key, value));
        else if (key == "trace_interval") t.trace_interval = static_cast<int>(p.to_int(key, value));
        else if (key == "jitter") t.jitter = p.to_bool(key, value);
        else if (key == "final_train_eval") t.final_train_eval = p.to_bool(key, value);
        else if (key == "default_bbox") t.default_bbox = p.to_bbox(key, value);
        else if (key == "ndc_near") t.ndc_near = p.to_double(key, value);
        else fail(source_name, p.line, "unknown key \"" + key + "\"");
    }
    return cfg;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config " + path);
    return parse_run_config(in, path);
}

namespace {

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string format_list(const std::vector<int>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(v[i]);
    }
    return out;
}

std::string format_vec3i(const Vec3i& v) {
    return std::to_string(v.x) + "," + std::to_string(v.y) + "," + std::to_string(v.z);
}

}  // namespace

void write_run_config(std::ostream& out, const RunConfig& cfg) {
    const TrainConfig& t = cfg.train;
    if (!cfg.preset_name.empty()) out << "preset=" << cfg.preset_name << "\n";
    out << "dataset=" << cfg.dataset << "\n";
    out << "out=" << cfg.out << "\n";
    out << "seed=" << t.seed << "\n";
    out << "deterministic=" << (t.deterministic ? "true" : "false") << "\n";
    out << "mode=" << (t.mode == FieldMode::VM ? "vm" : "cp") << "\n";
    out << "decoder=" << decoder_kind_name(t.decoder) << "\n";
    out << "density_ranks=" << format_vec3i(t.ranks.density) << "\n";
    out << "appearance_ranks=" << format_vec3i(t.ranks.appearance) << "\n";
    out << "feature_count=" << t.feature_count << "\n";
    out << "batch_size=" << t.batch_size << "\n";
    out << "total_steps=" << t.total_steps << "\n";
    out << "n0=" << t.n0 << "\n";
    out << "final_n=" << t.final_n << "\n";
    out << "upsample_steps=" << format_list(t.upsample_steps) << "\n";
    out << "occupancy_steps=" << format_list(t.occupancy_steps) << "\n";
    out << "bbox_shrink_step=" << t.bbox_shrink_step << "\n";
    out << "reg=" << reg_kind_name(t.loss.reg) << "\n";
    out << "reg_weight=" << format_double(t.loss.weight) << "\n";
    out << "tv_appearance_scale=" << format_double(t.loss.tv_appearance_scale) << "\n";
    out << "tv_squared=" << (t.loss.tv_squared ? "true" : "false") << "\n";
    out << "lr_factors=" << format_double(t.lr_factors) << "\n";
    out << "lr_decoder=" << format_double(t.lr_decoder) << "\n";
    out << "lr_final_factor=" << format_double(t.lr_final_factor) << "\n";
    out << "density_shift=" << format_double(t.density_shift) << "\n";
    out << "occupancy_alpha_threshold=" << format_double(t.occupancy_alpha_threshold) << "\n";
    out << "alpha_cutoff=" << format_double(t.alpha_cutoff) << "\n";
    out << "termination_tau=" << format_double(t.termination_tau) << "\n";
    out << "max_samples=" << t.max_samples << "\n";
    out << "trace_interval=" << t.trace_interval << "\n";
    out << "jitter=" << (t.jitter ? "true" : "false") << "\n";
    out << "final_train_eval=" << (t.final_train_eval ? "true" : "false") << "\n";
    out << "default_bbox=" << format_double(t.default_bbox.min.x) << ","
        << format_double(t.default_bbox.min.y) << "," << format_double(t.default_bbox.min.z) << ","
        << format_double(t.default_bbox.max.x) << "," << format_double(t.default_bbox.max.y) << ","
        << format_double(t.default_bbox.max.z) << "\n";
    out << "ndc_near=" << format_double(t.ndc_near) << "\n";
}

void save_run_config(const std::string& path, const RunConfig& cfg) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write config " + path);
    write_run_config(out, cfg);
}

}  // namespace tensorf
