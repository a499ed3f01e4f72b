#include <exception>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "fbsdelda/experiment.hpp"

namespace {

fbsdelda::json load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw fbsdelda::ConfigError("cannot open config file: " + path);
    try {
        return fbsdelda::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw fbsdelda::ConfigError(std::string("config is not valid JSON: ") +
                                    e.what());
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"solver front end for coupled forward-backward systems with "
                 "delays and Levy noise"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir;
    int threads = 0;

    CLI::App* run = app.add_subcommand("run", "run an experiment config");
    run->add_option("config", config_path, "experiment config (JSON)")->required();
    run->add_option("--out", out_dir, "output directory");
    run->add_option("--threads", threads, "worker threads for path generation");

    CLI::App* validate = app.add_subcommand("validate", "validate a config file");
    validate->add_option("config", config_path, "experiment config (JSON)")
        ->required();

    CLI11_PARSE(app, argc, argv);

    try {
        fbsdelda::json config = load_config(config_path);
        if (validate->parsed()) {
            fbsdelda::parse_config(config);
            std::cout << "ok\n";
            return 0;
        }
        if (threads > 0) config["workers"] = threads;
        std::string dir = !out_dir.empty()
                              ? out_dir
                              : (config.contains("output_dir")
                                     ? config.at("output_dir").get<std::string>()
                                     : std::string("out"));
        fbsdelda::json result = fbsdelda::run_experiment(config, dir);
        std::cout << result.dump(2) << '\n';
        return 0;
    } catch (const fbsdelda::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "solver error: " << e.what() << '\n';
        return 3;
    }
}
