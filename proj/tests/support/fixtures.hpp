#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include "mvit/config.hpp"
#include "mvit/errors.hpp"
#include "mvit/model.hpp"
#include "mvit/pgm.hpp"
#include "mvit/rng.hpp"

namespace mvit::fixtures {

namespace fs = std::filesystem;

inline Parameter& find_parameter(Model& m, std::string_view suffix) {
    for (auto& p : m.store().parameters())
        if (p.name.ends_with(suffix)) return p;
    throw ConfigError("no parameter ending in " + std::string(suffix));
}

inline void fill_parameter(Model& m, std::string_view suffix, double v) {
    auto vals = find_parameter(m, suffix).tensor.mutable_values();
    std::fill(vals.begin(), vals.end(), v);
}

/// Zero fc2 and zero global logits: every token gets the same gate, so grids are mid-gray.
inline void write_uniform_checkpoint(const fs::path& path, const std::string& preset = "desk-64") {
    Model m(model_preset(preset), 5);
    fill_parameter(m, "merge.fc2.weight", 0.0);
    fill_parameter(m, "merge.fc2.bias", 0.0);
    fill_parameter(m, "merge.global_logits", 0.0);
    save_checkpoint(path, m);
}

/// Global logits of +1000 on `token` and -1000 elsewhere; the sigmoid saturates to an exact one-hot.
inline void write_one_hot_checkpoint(const fs::path& path, std::size_t token, const std::string& preset = "desk-64") {
    Model m(model_preset(preset), 5);
    fill_parameter(m, "merge.fc2.weight", 0.0);
    fill_parameter(m, "merge.fc2.bias", 0.0);
    auto g = find_parameter(m, "merge.global_logits").tensor.mutable_values();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = i == token ? 1000.0 : -1000.0;
    save_checkpoint(path, m);
}

inline void write_avg_pool_checkpoint(const fs::path& path) {
    ModelConfig cfg = model_preset("desk-64");
    cfg.merge = MergeMode::avg_pool;
    save_checkpoint(path, Model(cfg, 5));
}

/// `n` random square P6 images named img0.ppm, img1.ppm, ...
inline void write_sample_images(const fs::path& dir, std::size_t n, std::size_t side = 48, std::uint64_t seed = 11) {
    fs::create_directories(dir);
    Rng rng = make_rng(seed, "fixture-images");
    for (std::size_t i = 0; i < n; ++i) {
        RgbImage img{side, side, std::vector<std::uint8_t>(3 * side * side)};
        for (auto& px : img.pixels) px = static_cast<std::uint8_t>(uniform01(rng) * 255.999);
        write_ppm(dir / ("img" + std::to_string(i) + ".ppm"), img);
    }
}

inline std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

struct RunResult {
    int code = -1;
    std::string out, err;
};

/// Runs the CLI with `args` through the shell, capturing stdout and stderr into `scratch`.
inline RunResult run_cli(const fs::path& binary, const std::string& args, const fs::path& scratch) {
    fs::create_directories(scratch);
    const fs::path out = scratch / "stdout.txt", err = scratch / "stderr.txt";
    const std::string cmd = "'" + binary.string() + "' " + args + " > '" + out.string() + "' 2> '" + err.string() + "'";
    const int status = std::system(cmd.c_str());
    RunResult r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(out);
    r.err = slurp(err);
    return r;
}

/// Regular files under `dir` (non-recursive) mapped name -> bytes.
inline std::vector<std::pair<std::string, std::string>> dir_contents(const fs::path& dir) {
    std::vector<std::pair<std::string, std::string>> files;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file()) files.emplace_back(e.path().filename().string(), slurp(e.path()));
    std::sort(files.begin(), files.end());
    return files;
}

}  // namespace mvit::fixtures
