#include "slideseg/checkpoint.hpp"
#include "slideseg/metrics.hpp"
#include "slideseg/volume_files.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include <sys/wait.h>

using namespace slideseg;
using namespace slideseg::testing;
namespace fs = std::filesystem;

namespace {

int run(const std::string& args, const fs::path& log) {
    const std::string cmd = std::string(SLIDESEG_CLI_PATH) + " " + args + " >" + log.string() + " 2>&1";
    const int rc = std::system(cmd.c_str());
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path checkpoint_in(const fs::path& dir) {
    const fs::path p = dir / "model.ckpt";
    save_checkpoint(trained_model(), p);
    return p;
}

}  // namespace

TEST(Cli, SynthIsDeterministic) {
    const fs::path d = temp_dir("cli_synth");
    ASSERT_EQ(run("synth --kind ellipsoid --shape 24,28,20 --seed 5 --out " + (d / "a").string(), d / "log"), 0);
    ASSERT_EQ(run("synth --kind ellipsoid --shape 24,28,20 --seed 5 --out " + (d / "b").string(), d / "log"), 0);
    for (const char* f : {"ellipsoid_5.vol.json", "ellipsoid_5.vol.raw", "ellipsoid_5.mask.rle.json"}) {
        const std::string a = slurp(d / "a" / f);
        ASSERT_FALSE(a.empty()) << f;
        EXPECT_EQ(a, slurp(d / "b" / f)) << f;
    }
    const Volume v = load_volume(d / "a" / "ellipsoid_5.vol.json");
    EXPECT_EQ(v.nx(), 24);
    EXPECT_EQ(v.ny(), 28);
    EXPECT_EQ(v.nz(), 20);
    ASSERT_EQ(run("synth --kind ellipsoid --shape 24,28,20 --seed 6 --out " + (d / "c").string(), d / "log"), 0);
    EXPECT_NE(slurp(d / "a" / "ellipsoid_5.vol.raw"), slurp(d / "c" / "ellipsoid_6.vol.raw"));

    // seed from the environment
    ASSERT_EQ(run("synth --kind ellipsoid --shape 24,28,20 --out " + (d / "e").string(), d / "log"), 0);
    ASSERT_EQ(std::system(("SLIDESEG_SEED=5 " + std::string(SLIDESEG_CLI_PATH) + " synth --kind ellipsoid --shape 24,28,20 --out " +
                           (d / "f").string() + " >/dev/null")
                              .c_str()),
              0);
    EXPECT_EQ(slurp(d / "f" / "ellipsoid_5.vol.raw"), slurp(d / "a" / "ellipsoid_5.vol.raw"));
}

TEST(Cli, ExitCodes) {
    const fs::path d = temp_dir("cli_exit");
    EXPECT_EQ(run("", d / "log"), 1);
    EXPECT_EQ(run("bogus", d / "log"), 1);
    EXPECT_EQ(run("synth --kind cube --out " + d.string(), d / "log"), 1);
    EXPECT_EQ(run("synth --shape 8 --out " + d.string(), d / "log"), 1);
    EXPECT_EQ(run("preprocess --in " + (d / "nope.vol.json").string(), d / "log"), 2);

    ASSERT_EQ(run("synth --shape 32 --seed 1 --out " + d.string(), d / "log"), 0);
    const std::string vol = (d / "sphere_1.vol.json").string();
    const fs::path ckpt = checkpoint_in(d);
    EXPECT_EQ(run("infer --volume " + vol + " --checkpoint " + (d / "missing.ckpt").string() +
                      " --start-index 16 --prompt box:7,7,24,24",
                  d / "log"),
              2);
    EXPECT_EQ(run("infer --volume " + vol + " --checkpoint " + ckpt.string() + " --start-index 0 --prompt box:7,7,24,24",
                  d / "log"),
              1);
    EXPECT_NE(slurp(d / "log").find("start-index"), std::string::npos);
    EXPECT_EQ(run("infer --volume " + vol + " --checkpoint " + ckpt.string() + " --start-index 31 --prompt box:7,7,24,24",
                  d / "log"),
              1);
    EXPECT_EQ(run("infer --volume " + vol + " --checkpoint " + ckpt.string() + " --start-index 16 --prompt circle:1",
                  d / "log"),
              1);

    std::ofstream(d / "junk.ckpt") << "definitely not a checkpoint";
    EXPECT_EQ(run("infer --volume " + vol + " --checkpoint " + (d / "junk.ckpt").string() +
                      " --start-index 16 --prompt box:7,7,24,24",
                  d / "log"),
              2);
    std::ofstream(d / "bad.cfg") << "steps = many\n";
    EXPECT_EQ(run("train --desk --data " + d.string() + " --config " + (d / "bad.cfg").string() + " --out " +
                      (d / "m.ckpt").string(),
                  d / "log"),
              1);
}

TEST(Cli, InferWritesMask) {
    const fs::path d = temp_dir("cli_infer");
    ASSERT_EQ(run("synth --shape 32 --seed 2 --out " + d.string(), d / "log"), 0);
    const fs::path ckpt = checkpoint_in(d);
    ASSERT_EQ(run("infer --volume " + (d / "sphere_2.vol.json").string() + " --checkpoint " + ckpt.string() +
                      " --start-index 16 --prompt box:7,7,24,24 --out " + (d / "pred.mask.rle.json").string(),
                  d / "log"),
              0)
        << slurp(d / "log");
    EXPECT_NE(slurp(d / "log").find("empty_mask"), std::string::npos);
    const VolumeMask pred = load_mask(d / "pred.mask.rle.json");
    const VolumeMask gt = load_mask(d / "sphere_2.mask.rle.json");
    EXPECT_GT(dice(pred, gt, 1, 1), 0.85);
}

TEST(Cli, EvalNoisyTable) {
    const fs::path d = temp_dir("cli_eval");
    const fs::path ckpt = checkpoint_in(d);
    ASSERT_EQ(run("eval --suite noisy --count 1 --seed 4 --checkpoint " + ckpt.string() + " --out " +
                      (d / "noisy.csv").string(),
                  d / "log"),
              0)
        << slurp(d / "log");
    std::istringstream in(slurp(d / "noisy.csv"));
    std::string line;
    std::getline(in, line);
    EXPECT_EQ(line, "metric,value,config_hash");
    int rows = 0;
    std::string hash;
    while (std::getline(in, line)) {
        ++rows;
        EXPECT_EQ(line.rfind("noisy/", 0), 0u) << line;
        const std::string h = line.substr(line.rfind(',') + 1);
        EXPECT_EQ(h.size(), 16u);
        if (!hash.empty()) EXPECT_EQ(h, hash);
        hash = h;
    }
    EXPECT_EQ(rows, 25);

    ASSERT_EQ(run("eval --suite dice --count 2 --seed 4 --checkpoint " + ckpt.string(), d / "log"), 0);
    const std::string out = slurp(d / "log");
    EXPECT_NE(out.find("dice/mean,"), std::string::npos);
    EXPECT_EQ(run("eval --suite bogus --checkpoint " + ckpt.string(), d / "log"), 1);
}
