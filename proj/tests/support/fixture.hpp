#pragma once

// On-disk desk problem: FEATSET files plus a manifest in a scratch directory.

#include <filesystem>
#include <fstream>
#include <random>
#include <string>

#include "moprune/datamodel.hpp"
#include "support/synthetic.hpp"

namespace moprune::testkit {

struct DeskProblem {
    std::size_t classes = 3;
    std::size_t dim = 8;
    std::size_t n_train = 60;
    std::size_t n_test = 30;
    std::size_t n_ood = 30;
    double separation = 6.0;
    double ood_shift = 10.0;
    std::uint64_t seed = 1;
    /// Extra manifest lines, e.g. "population_size=6".
    std::string settings;
};

inline std::filesystem::path scratch_dir(const std::string& name)
{
    std::random_device rd;
    auto dir = std::filesystem::temp_directory_path() / ("moprune_" + name + "_" + std::to_string(rd()));
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

/// Writes ind_train/ind_test/ood FEATSET files and manifest.txt into `dir`.
inline std::filesystem::path write_desk_problem(const std::filesystem::path& dir, const DeskProblem& p)
{
    const GaussianClasses ind(p.classes, p.dim, p.separation, 0.0, p.seed);
    const GaussianClasses far(p.classes, p.dim, p.separation, p.ood_shift, p.seed);
    const auto ds = make_dataset(ind, p.n_train, p.n_test, p.seed);
    write_featset(dir / "ind_train.featset", ds.train, p.classes);
    write_featset(dir / "ind_test.featset", ds.test, p.classes);
    write_featset(dir / "far.featset", far.sample(p.n_ood, p.seed * 2 + 3), p.classes);

    const auto manifest = dir / "manifest.txt";
    std::ofstream out(manifest);
    out << "ind_train=ind_train.featset\nind_test=ind_test.featset\nood.far=far.featset\n" << p.settings;
    return manifest;
}

inline std::string slurp(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace moprune::testkit
