// mhunet: command-line front end for preprocessing, training, evaluation, prediction and
// SSM benchmarking. Run `mhunet --help` or `mhunet <command> --help`.

#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "mhunet/cli/commands.hpp"

int main(int argc, char** argv) {
  using namespace mhunet;
  CLI::App app{"Mamba-HUNet segmentation pipeline"};
  app.require_subcommand(1);

  std::string config_path, out, seed;
  std::vector<std::string> overrides;
  bool deterministic = false;
  app.add_option("--config", config_path, "INI config file ([section] key = value)");
  app.add_option("--seed", seed, "seed for every random draw (run.seed)");
  app.add_option("--out", out, "output directory (run.out)");
  app.add_option("--override", overrides, "section.key=value, applied after the config file")->expected(1)->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  app.add_flag("--deterministic", deterministic, "omit timestamps from log lines");

  std::string predict_input;
  for (const auto& [name, help] : std::vector<std::pair<std::string, std::string>>{
           {"synth", "write synthetic ellipse patients as NIfTI volumes"},
           {"preprocess", "slice, resize, sharpen and normalize volumes; split patients"},
           {"train", "train on a preprocessed dataset and save the best checkpoint"},
           {"eval", "score a checkpoint on a split and write a JSON report"},
           {"predict", "segment one slice and write a PNG mask"},
           {"bench-scan", "time recurrent vs FFT-convolution SSM evaluation"}}) {
    auto* sub = app.add_subcommand(name, help);
    sub->fallthrough();
    if (name == "predict") sub->add_option("input", predict_input, "slice (.bin) or volume (.nii)");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return cli::kExitInput;
  }

  cli::RunConfig rc;
  try {
    if (!config_path.empty()) {
      std::ifstream in(config_path);
      if (!in) throw IoError("cannot open config file '" + config_path + "'");
      std::stringstream text;
      text << in.rdbuf();
      rc.merge_ini(text.str(), config_path);
    }
    if (!seed.empty()) rc.set("run.seed", seed);
    if (!out.empty()) rc.set("run.out", out);
    if (deterministic) rc.set("run.deterministic", "true");
    if (!predict_input.empty()) rc.set("predict.input", predict_input);
    for (const auto& o : overrides) rc.apply_override(o);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return cli::kExitInput;
  }
  return cli::run_command(app.get_subcommands().front()->get_name(), rc, std::cout, std::cerr);
}
