// Integration checks for the aggseg command-line surface. Runs the real
// binary (path in argv[1]) against small synthetic instances and verifies
// outputs, determinism, and exit codes.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include "aggseg/volume.hpp"

namespace fs = std::filesystem;
using namespace aggseg;

namespace {

int g_failures = 0;

void check(bool ok, const std::string& what) {
    std::cout << (ok ? "  ok: " : "  FAIL: ") << what << "\n";
    if (!ok) ++g_failures;
}

std::string g_bin;
fs::path g_dir;

int run(const std::string& args, const std::string& stderr_file = "") {
    std::string cmd = g_bin + " " + args;
    if (!stderr_file.empty()) cmd += " 2>" + (g_dir / stderr_file).string();
    cmd += " >/dev/null";
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::ostringstream s;
    s << f.rdbuf();
    return s.str();
}

bool same_bytes(const fs::path& a, const fs::path& b) { return slurp(a) == slurp(b); }

std::string path(const char* name) { return (g_dir / name).string(); }

}  // namespace

int main(int argc, char** argv) {
    if (argc < 2) {
        std::cerr << "usage: cli_tests <path-to-aggseg>\n";
        return 2;
    }
    g_bin = argv[1];
    g_dir = fs::temp_directory_path() / "aggseg_cli_tests";
    fs::remove_all(g_dir);
    fs::create_directories(g_dir);

    std::cout << "[cli] pipeline on a small benchmark\n";
    check(run("synth --shape 48x48 --regions 6 --blur 1 --noise 0.3 --seed 11 --out " +
              path("data")) == 0,
          "synth succeeds");
    check(fs::exists(path("data") + "/gt.ndv") && fs::exists(path("data") + "/cues.ndv") &&
              fs::exists(path("data") + "/sp.ndv") && fs::exists(path("data") + "/manifest.json"),
          "synth writes volumes and manifest");

    const std::string inputs = " --sp " + path("data") + "/sp.ndv --cues " + path("data") +
                               "/cues.ndv --gt " + path("data") + "/gt.ndv";
    const std::string forest = " --trees 16 --depth 8 --seed 3";

    check(run("train" + inputs + " --method flat" + forest + " --out " + path("flat.json")) == 0,
          "flat training succeeds");
    check(run("train" + inputs + " --method gala --epochs 0" + forest + " --out " +
              path("gala0.json")) == 0,
          "gala with zero epochs succeeds");
    check(same_bytes(path("flat.json"), path("gala0.json")),
          "--method flat equals --method gala --epochs 0 byte for byte");
    check(fs::exists(path("flat.json") + ".training.csv") &&
              fs::exists(path("flat.json") + ".provenance.json") &&
              fs::exists(path("flat.json") + ".manifest.json"),
          "train writes training dump, provenance, manifest");

    check(run("train" + inputs + " --method gala --epochs 2" + forest + " --out " +
              path("gala.json")) == 0,
          "gala training succeeds");
    check(run("train" + inputs + " --method lash --epochs 1" + forest + " --out " +
              path("lash.json")) == 0,
          "lash training succeeds");

    std::cout << "[cli] segment\n";
    const std::string seg_inputs =
        " --sp " + path("data") + "/sp.ndv --cues " + path("data") + "/cues.ndv";
    check(run("segment" + seg_inputs + " --model " + path("gala.json") +
              " --threshold 0.5 --save-tree " + path("tree.csv") + " --out " +
              path("seg.ndv")) == 0,
          "learned segmentation succeeds");
    check(run("segment" + seg_inputs + " --policy mean --out " + path("seg_mean.ndv")) == 0,
          "mean policy needs no model");
    check(run("segment" + seg_inputs + " --policy random --seed 4 --out " +
              path("seg_rand.ndv")) == 0,
          "random policy runs");

    // threshold 0 keeps the superpixels untouched
    check(run("segment" + seg_inputs + " --model " + path("gala.json") +
              " --threshold 0 --out " + path("seg_t0.ndv")) == 0,
          "threshold 0 segmentation succeeds");
    check(same_bytes(path("seg_t0.ndv"), path("data") + "/sp.ndv"),
          "threshold 0 output equals the superpixels");

    std::cout << "[cli] determinism\n";
    check(run("segment" + seg_inputs + " --model " + path("gala.json") +
              " --threshold 0.5 --save-tree " + path("tree_b.csv") + " --out " +
              path("seg_b.ndv")) == 0,
          "repeat segmentation succeeds");
    check(same_bytes(path("seg.ndv"), path("seg_b.ndv")), "segmentations are byte-identical");
    check(same_bytes(path("tree.csv"), path("tree_b.csv")), "merge logs are byte-identical");
    check(run("train" + inputs + " --method gala --epochs 2" + forest + " --out " +
              path("gala_b.json")) == 0,
          "repeat training succeeds");
    check(same_bytes(path("gala.json"), path("gala_b.json")), "models are byte-identical");

    std::cout << "[cli] eval\n";
    check(run("eval --seg " + path("data") + "/gt.ndv --gt " + path("data") +
              "/gt.ndv --metrics vi,ri,are,covering --out " + path("self.csv")) == 0,
          "eval of gt against itself succeeds");
    {
        std::istringstream csv(slurp(path("self.csv")));
        std::string line;
        std::getline(csv, line);
        check(line == "metric,threshold,value", "metric CSV header");
        double vi_v = -1, ri_v = -1, are_v = -1, cov_v = -1;
        while (std::getline(csv, line)) {
            std::sscanf(line.c_str(), "vi,,%lf", &vi_v);
            std::sscanf(line.c_str(), "ri,,%lf", &ri_v);
            std::sscanf(line.c_str(), "are,,%lf", &are_v);
            std::sscanf(line.c_str(), "covering,,%lf", &cov_v);
        }
        check(vi_v == 0.0 && ri_v == 1.0 && are_v == 0.0 && cov_v == 1.0,
              "identical partitions score perfectly");
    }

    check(run("eval --sweep --sp " + path("data") + "/sp.ndv --tree " + path("tree.csv") +
              " --gt " + path("data") + "/gt.ndv --metrics vi --thresholds 0:1:7 --out " +
              path("sweep.csv")) == 0,
          "sweep succeeds");
    {
        std::istringstream csv(slurp(path("sweep.csv")));
        std::string line;
        int rows = 0;
        std::getline(csv, line);
        while (std::getline(csv, line))
            if (!line.empty()) ++rows;
        check(rows == 7, "sweep emits one vi row per threshold");
    }

    check(run("eval --seg " + path("seg.ndv") + " --gt " + path("data") +
              "/gt.ndv --metrics vi,breakdown --out " + path("m.csv")) == 0,
          "breakdown eval succeeds");
    check(slurp(path("m.csv") + ".breakdown.csv")
                  .rfind("segment_id,mass,entropy,direction", 0) == 0,
          "breakdown CSV has its own schema");

    std::cout << "[cli] watershed\n";
    check(run("watershed --cues " + path("data") + "/cues.ndv --channel 0 --out " +
              path("ws.ndv")) == 0,
          "watershed from regional minima succeeds");
    check(fs::exists(path("ws.ndv")) && fs::exists(path("ws.ndv") + ".manifest.json"),
          "watershed writes volume and manifest");

    std::cout << "[cli] offline re-training from the dump\n";
    check(run("train --from-csv " + path("flat.json") + ".training.csv" + forest + " --out " +
              path("retrained.json")) == 0,
          "re-training from the dumped pool succeeds");
    check(same_bytes(path("flat.json"), path("retrained.json")),
          "re-trained model is byte-identical to the original");

    std::cout << "[cli] config file\n";
    {
        std::ofstream f(g_dir / "cfg.json");
        f << "{\"regions\": 4, \"seed\": 77}\n";
    }
    check(run("synth --config " + path("cfg.json") + " --shape 24x24 --out " + path("cfgd")) == 0,
          "config file applies");
    check(slurp(path("cfgd") + "/manifest.json").find("\"regions\": 4") != std::string::npos,
          "flag-less values come from the config file");

    std::cout << "[cli] exit codes\n";
    check(run("train --bogus", "usage.err") == 2, "usage error exits 2");
    {
        const int code = run("train --sp " + path("data") + "/sp.ndv --cues " + path("data") +
                                 "/cues.ndv --gt " + path("missing.ndv") + " --out " +
                                 path("x.json"),
                             "missing.err");
        check(code == 3, "missing input exits 3");
        check(slurp(path("missing.err")).find("missing.ndv") != std::string::npos,
              "diagnostic names the missing path");
    }
    {
        // gt carrying an ignore-only superpixel trips the gala assertion
        LabelVolume sp(Shape({2, 4}), {1, 1, 2, 2, 1, 1, 2, 2});
        LabelVolume gt(Shape({2, 4}), {5, 5, 0, 0, 5, 5, 0, 0});
        CueVolume cues(Shape({2, 4}), 1);
        for (std::uint64_t i = 0; i < 8; ++i) cues.at(0, i) = 0.25;
        save_volume(sp, g_dir / "bad_sp.ndv");
        save_volume(gt, g_dir / "bad_gt.ndv");
        save_volume(cues, g_dir / "bad_cues.ndv");
        const int code =
            run("train --sp " + path("bad_sp.ndv") + " --cues " + path("bad_cues.ndv") +
                    " --gt " + path("bad_gt.ndv") +
                    " --method gala --epochs 1 --init mean --trees 4 --depth 3 --out " +
                    path("bad.json"),
                "assert.err");
        check(code == 4, "label-0 assertion in gala exits 4");
    }

    std::cout << (g_failures == 0 ? "cli_tests: all checks passed\n"
                                  : "cli_tests: FAILURES\n");
    return g_failures == 0 ? 0 : 1;
}
