#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "test_util.hpp"
#include "volflow/dataset.hpp"
#include "volflow/imageio.hpp"

using namespace volflow;
namespace fs = std::filesystem;

namespace {

int run(const std::string& args) {
  std::string cmd = std::string(VOLFLOW_BIN) + " " + args + " >/dev/null 2>&1";
  int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

struct CliFixture {
  std::string root = make_temp_dir("cli");
  std::string data = root + "/data";
  std::string run_dir = root + "/run";

  CliFixture() {
    REQUIRE(run("gen-data --volumes 6 --seed 4 --resolution 32 --out " + data + " --threads 2") ==
            0);
    std::ofstream cfg(root + "/train.cfg");
    cfg << "model=tiny\ndim=32\nheads=2\ndepth=1\nlr_peak=0.001\nwarmup_steps=3\n"
        << "total_steps=6\nbatch_per_step=4\naccum_steps=1\nregime=startboost\np_first=0.3\n"
        << "seed=2\ndata_dir=" << data << "\nout_dir=" << run_dir << "\nthreads=2\n";
    cfg.close();
    REQUIRE(run("train --config " + root + "/train.cfg") == 0);
  }

  std::string ckpt() const { return run_dir + "/checkpoint_final.bin"; }
};

}  // namespace

TEST_CASE("end-to-end CLI pipeline with exit codes and artifacts") {
  CliFixture fx;

  SUBCASE("exit codes: usage 2, data 3") {
    CHECK(run("definitely-not-a-command") == 2);
    CHECK(run("train --config /nonexistent.cfg") == 5);
    CHECK(run("evaluate --ckpt /nonexistent.bin --data " + fx.data + " --out " + fx.root +
              "/e0") == 5);
    CHECK(run("gen-data --volumes 3 --out " + fx.data) == 3);  // non-empty without --force
    CHECK(run("sample --ckpt " + fx.ckpt() + " --mode gt-head --out " + fx.root + "/s0") == 2);
  }

  SUBCASE("training artifacts exist") {
    CHECK(fs::exists(fx.run_dir + "/loss.csv"));
    CHECK(fs::exists(fx.run_dir + "/train_config.txt"));
    CHECK(fs::exists(fx.ckpt()));
    std::string csv = read_file_bytes(fx.run_dir + "/loss.csv");
    CHECK(csv.rfind("step,loss,lr", 0) == 0);
  }

  SUBCASE("sample writes latents, montage, trace with stop reason") {
    std::string out = fx.root + "/samples";
    CHECK(run("sample --ckpt " + fx.ckpt() + " --mode full-body --data " + fx.data +
              " --count 2 --steps 4 --out " + out + " --threads 2") == 0);
    CHECK(fs::exists(out + "/sample_0000.ctfl"));
    CHECK(fs::exists(out + "/sample_0000_montage.pgm"));
    CHECK(fs::exists(out + "/run_config.txt"));
    std::string traces = read_file_bytes(out + "/traces.json");
    CHECK(traces.find("stop_reason") != std::string::npos);

    // montage: axial W + gap + sagittal H + gap + coronal W panels
    auto latents = read_latent_volume(out + "/sample_0000.ctfl");
    Dataset ds = load_dataset(fx.data, false);
    auto pixels = decode_volume(latents, ds.basis);
    Montage m = make_montage(pixels);
    int w = pixels[0].width, h = pixels[0].height, n = static_cast<int>(pixels.size());
    CHECK(m.width == w + Montage::kGap + h + Montage::kGap + w);
    CHECK(m.height == std::max(h, n));

    std::string pgm = read_file_bytes(out + "/sample_0000_montage.pgm");
    CHECK(pgm.rfind("P5\n", 0) == 0);
  }

  SUBCASE("evaluate emits CSV + table and is byte-stable across reruns") {
    std::string e1 = fx.root + "/ev1", e2 = fx.root + "/ev2";
    std::string args = "evaluate --ckpt " + fx.ckpt() + " --data " + fx.data +
                       " --mode next-block --steps 4 --seed 9 --threads 2 --out ";
    CHECK(run(args + e1) == 0);
    CHECK(run(args + e2) == 0);
    CHECK(read_file_bytes(e1 + "/metrics.csv") == read_file_bytes(e2 + "/metrics.csv"));
    std::string csv = read_file_bytes(e1 + "/metrics.csv");
    CHECK(csv.rfind("mode,model,params_m,resolution,fid,fvd_f16,fvd_f128", 0) == 0);
    CHECK(csv.find("next-block") != std::string::npos);
    // no volume here reaches 128 slices, so fvd_f128 prints as an em dash
    CHECK(csv.find("—") != std::string::npos);
  }

  SUBCASE("interpolation variants produce three distinct rows") {
    for (const char* res : {"x2:bilinear", "x2:bicubic", "x2:nearest"}) {
      std::string out = fx.root + "/ev_" + std::string(res).substr(3);
      CHECK(run("evaluate --ckpt " + fx.ckpt() + " --data " + fx.data +
                " --mode next-block --steps 2 --volumes 3 --resolution " + std::string(res) +
                " --threads 2 --out " + out) == 0);
      std::string csv = read_file_bytes(out + "/metrics.csv");
      CHECK(csv.find(res) != std::string::npos);
    }
    CHECK(run("evaluate --ckpt " + fx.ckpt() + " --data " + fx.data +
              " --resolution x2:sinc --out " + fx.root + "/bad") == 2);
  }

  SUBCASE("inspect prints parameter counts and dataset stats") {
    CHECK(run("inspect --model s") == 0);
    CHECK(run("inspect --ckpt " + fx.ckpt()) == 0);
    CHECK(run("inspect --cache " + fx.data) == 0);
    CHECK(run("inspect") == 2);
  }

  SUBCASE("gen-data reruns are byte-identical with the same seed") {
    std::string d2 = fx.root + "/data2";
    CHECK(run("gen-data --volumes 6 --seed 4 --resolution 32 --out " + d2 + " --threads 1") == 0);
    CHECK(read_file_bytes(fx.data + "/manifest.tsv") == read_file_bytes(d2 + "/manifest.tsv"));
    CHECK(read_file_bytes(fx.data + "/volume_0003.ctfl") ==
          read_file_bytes(d2 + "/volume_0003.ctfl"));
    CHECK(read_file_bytes(fx.data + "/calibration.txt") ==
          read_file_bytes(d2 + "/calibration.txt"));
  }
}
