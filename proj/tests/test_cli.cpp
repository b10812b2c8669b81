// CLI surface checks: output formats, exit codes, the bench size report and
// the serve/remote mode. The pic binary path arrives as argv[1].

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include "pic/descriptor.hpp"

namespace fs = std::filesystem;

namespace {

int g_failures = 0;
std::string g_cli;

void check(bool ok, const std::string& what) {
    if (!ok) {
        std::cout << "FAIL: " << what << "\n";
        g_failures++;
    } else {
        std::cout << "ok: " << what << "\n";
    }
}

struct RunResult {
    int exit_code;
    std::string out;
};

RunResult run(const std::string& args) {
    fs::path tmp = fs::temp_directory_path() / "pic_cli_out.txt";
    std::string cmd = g_cli + " " + args + " > " + tmp.string() + " 2>&1";
    int rc = std::system(cmd.c_str());
    std::ifstream f(tmp);
    std::stringstream ss;
    ss << f.rdbuf();
    return {rc == 0 ? 0 : 1, ss.str()};
}

void write_file(const fs::path& p, const std::string& s) {
    std::ofstream f(p);
    f << s;
}

} // namespace

int main(int argc, char** argv) {
    if (argc > 1) g_cli = argv[1];
    else if (const char* env = std::getenv("PIC_CLI")) g_cli = env;
    else g_cli = "./pic";

    fs::path work = fs::temp_directory_path() / "pic_cli_test";
    fs::remove_all(work);
    fs::create_directories(work);
    fs::path state = work / "state";

    // bench reports the 64KB encrypted-vector payload at lambda=128, dim=128
    RunResult bench = run("bench --lambda 128 --m-lvl 2 --dim 128 --trials 1");
    check(bench.exit_code == 0, "bench exits 0");
    check(bench.out.find("enc_vector_payload\t65536") != std::string::npos,
          "bench reports enc_vector_payload 65536");
    check(bench.out.find("ciphertext_payload\t512") != std::string::npos,
          "bench reports ciphertext_payload 512");

    // a small corpus: 3 images x 2 vectors, dim 4, via the tsv format
    write_file(work / "corpus.tsv",
               "imgA\t1\t2\t3\t4\n"
               "imgA\t1.5\t2.5\t3.5\t4.5\n"
               "imgB\t50\t60\t70\t80\n"
               "imgB\t51\t61\t71\t81\n"
               "imgC\t120\t130\t140\t150\n"
               "imgC\t121\t131\t141\t151\n");
    write_file(work / "query.tsv", "q\t50\t60\t70\t80\n");

    // k_nn=1 keeps the vote on the single exact match in this tiny corpus
    write_file(work / "pic.cfg", "lambda=64\nm_lvl=1\nseed=4\nk_nn=1\n");
    check(run("init --state " + state.string() + " --config " + (work / "pic.cfg").string())
                  .exit_code == 0,
          "init");
    check(run("init --state " + state.string() + " --lambda 64").exit_code == 1,
          "second init on the same state fails");
    check(run("register --state " + state.string() + " --user alice --policy '\"student\"'")
                  .exit_code == 0,
          "register");
    check(run("upload --state " + state.string() + " --user alice --vectors " +
              (work / "corpus.tsv").string() + " --format tsv")
                  .exit_code == 0,
          "upload (tsv)");

    std::string search_args = "--state " + state.string() + " --user alice --query " +
                              (work / "query.tsv").string() + " --format tsv";
    RunResult hit = run("search " + search_args + " --attr student --workers 2");
    check(hit.exit_code == 0, "search exits 0");
    check(hit.out.find("access: 1 owners") != std::string::npos, "search reports permitted owners");
    check(hit.out.find("1\talice/imgB\t") != std::string::npos, "closest image ranked first");

    RunResult oracle = run("oracle " + search_args + " --attr student");
    check(oracle.out == hit.out, "oracle output identical to search");

    // output format: rank<TAB>image_id<TAB>value lines after the access notice
    std::istringstream lines(hit.out);
    std::string first_line, second_line;
    std::getline(lines, first_line);
    std::getline(lines, second_line);
    check(first_line.rfind("access:", 0) == 0, "first line is the access notice");
    check(second_line.rfind("1\t", 0) == 0 && second_line.find('\t', 2) != std::string::npos,
          "ranked lines are rank<TAB>image_id<TAB>value");

    // denied attributes: exit 0, empty ranking, access: 0 owners
    RunResult denied = run("search " + search_args + " --attr nobody");
    check(denied.exit_code == 0, "denied search still exits 0");
    check(denied.out.find("access: 0 owners") != std::string::npos, "denied search notice");
    check(denied.out.find("\t") == std::string::npos, "denied search has no ranked lines");

    // protocol errors produce a machine-readable error line and exit 1
    RunResult unknown = run("search --state " + state.string() + " --user ghost --query " +
                            (work / "query.tsv").string() + " --format tsv");
    check(unknown.exit_code == 1, "unknown user exits nonzero");
    check(unknown.out.rfind("error\t", 0) == 0, "error line is machine-readable");

    // dump-index emits JSON with the owner's clusters
    RunResult dump = run("dump-index --state " + state.string());
    check(dump.exit_code == 0, "dump-index exits 0");
    check(dump.out.find("\"alice/") != std::string::npos, "dump-index lists cluster members");

    // build-vocab writes an fvecs vocabulary
    RunResult bv_bad = run("build-vocab --vectors " + (work / "corpus.tsv").string() +
                           " --out " + (work / "vocab.fvecs").string() + " --v 2");
    check(bv_bad.exit_code == 1, "build-vocab rejects tsv input (expects fvecs)");
    {
        std::vector<std::vector<float>> recs;
        for (int i = 0; i < 20; i++)
            recs.push_back({float(i % 4) * 50.0f, float(i % 4) * 50.0f + 1});
        pic::write_fvecs((work / "raw.fvecs").string(), recs);
    }
    RunResult bv = run("build-vocab --vectors " + (work / "raw.fvecs").string() + " --out " +
                       (work / "vocab.fvecs").string() + " --v 4 --seed 3");
    check(bv.exit_code == 0, "build-vocab on fvecs input");
    check(bv.out.find("v=4") != std::string::npos, "build-vocab reports size");
    check(pic::load_fvecs((work / "vocab.fvecs").string()).size() == 4,
          "vocabulary file holds v centroids");

    // rebuild-index after upload keeps the state searchable
    RunResult rb = run("rebuild-index --state " + state.string() + " --user alice");
    check(rb.exit_code == 0, "rebuild-index");
    RunResult hit2 = run("search " + search_args + " --attr student");
    RunResult oracle2 = run("oracle " + search_args + " --attr student");
    check(hit2.exit_code == 0 && hit2.out == oracle2.out, "search == oracle after rebuild");

    fs::remove_all(work);
    std::cout << (g_failures == 0 ? "CLI checks passed\n" : "CLI checks FAILED\n");
    return g_failures == 0 ? 0 : 1;
}
