#ifndef STORMDISPATCH_H
#define STORMDISPATCH_H

/* C interface to the storm restoration dispatch library.
 *
 * Every function returns an sd_status. On failure the thread-local message
 * from sd_last_error() describes the cause. Handles are opaque and owned by
 * the caller, who releases them with the matching *_free function. */

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define SD_API __declspec(dllexport)
#else
#define SD_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum sd_status {
    SD_OK = 0,
    SD_ERR_PARAMETER = 1,  /* argument outside its domain */
    SD_ERR_PARSE = 2,      /* malformed input file */
    SD_ERR_VALIDATION = 3, /* input breaks a model invariant */
    SD_ERR_NUMERICAL = 4,
    SD_ERR_CONFIG = 5, /* inconsistent configuration */
    SD_ERR_CONTRACT = 6,
    SD_ERR_IO = 7,
    SD_ERR_INTERNAL = 8
} sd_status;

SD_API const char* sd_version(void);
SD_API const char* sd_status_name(sd_status status);
/* Message of the last failure on this thread; empty after a success. */
SD_API const char* sd_last_error(void);

/* ---- workspace: hazard config plus its feeder and road graph ---- */

typedef struct sd_workspace sd_workspace;

typedef struct sd_workspace_info {
    const char* feeder_name; /* valid while the workspace lives */
    size_t buses;
    size_t branches;
    size_t depots;
    double total_load_kw;
    uint64_t config_hash;
} sd_workspace_info;

/* feeder_path may be NULL to use the feeder named by the hazard config. */
SD_API sd_status sd_workspace_open(const char* hazard_config_path, const char* feeder_path, sd_workspace** out);
SD_API sd_status sd_workspace_info_get(const sd_workspace* ws, sd_workspace_info* out);
SD_API void sd_workspace_free(sd_workspace* ws);

/* ---- dispatchers ---- */

typedef struct sd_dispatcher sd_dispatcher;

typedef enum sd_select_mode { SD_SELECT_GREEDY = 0, SD_SELECT_SAMPLE = 1, SD_SELECT_TEMPERATURE = 2 } sd_select_mode;

typedef struct sd_dispatcher_options {
    const char* kind;       /* "drl", "greedy_value", "travel_aware" or "oracle" */
    const char* checkpoint; /* drl only */
    sd_select_mode mode;    /* drl only */
    double temperature;
    uint64_t seed;
    int oracle_depth; /* 0 selects the default */
} sd_dispatcher_options;

SD_API void sd_dispatcher_options_init(sd_dispatcher_options* options);
SD_API sd_status sd_dispatcher_create(const sd_workspace* ws, const sd_dispatcher_options* options, int crews,
                                      sd_dispatcher** out);
SD_API void sd_dispatcher_free(sd_dispatcher* d);

/* ---- single episodes ---- */

typedef struct sd_episode sd_episode;

typedef struct sd_episode_metrics {
    uint64_t seed;
    double ens_mwh;
    double replay_ens_mwh; /* integral of the trace's unserved load */
    double critical_t95_min;
    double travel_km;
    int replans;
    int decisions;
    double decision_ms_median;
    int violations;
    double total_reward;
    double horizon_h;
} sd_episode_metrics;

/* env_config_path may be NULL for defaults. */
SD_API sd_status sd_episode_run(const sd_workspace* ws, sd_dispatcher* d, const char* env_config_path, int crews,
                                uint64_t scenario_seed, sd_episode** out);
SD_API sd_status sd_episode_metrics_get(const sd_episode* ep, sd_episode_metrics* out);
/* Number of trace records and their JSON-lines rendering (valid while the episode lives). */
SD_API sd_status sd_episode_trace_jsonl(const sd_episode* ep, const char** text, size_t* records);
SD_API void sd_episode_free(sd_episode* ep);

/* ---- commands ---- */

typedef struct sd_gen_options {
    const char* hazard_config;
    const char* feeder; /* optional */
    uint64_t seed_base;
    int count;
    const char* out_dir;
    int force;
} sd_gen_options;

SD_API sd_status sd_gen_scenarios(const sd_gen_options* options, char config_hash_hex[17]);

typedef struct sd_evaluate_options {
    const char* hazard_config;
    const char* feeder;       /* optional */
    const char* scenario_dir; /* optional; otherwise seed_base/count are generated */
    uint64_t seed_base;
    int count;
    int crews;
    const char* env_config; /* optional */
    const sd_dispatcher_options* dispatchers;
    size_t dispatcher_count;
    const char* out_dir;
    int timing;
} sd_evaluate_options;

typedef struct sd_method_summary {
    char method[32];
    size_t scenarios;
    double ens_median, ens_p25, ens_p75;
    double t95_median, t95_p25, t95_p75;
    double travel_median, travel_p25, travel_p75;
    double decision_ms_median, decision_ms_p25, decision_ms_p75;
    int violations;
} sd_method_summary;

/* Writes episodes.csv, report.json and report.txt. `summaries` may be NULL;
 * otherwise up to `capacity` rows are filled and *count receives the total. */
SD_API sd_status sd_evaluate(const sd_evaluate_options* options, sd_method_summary* summaries, size_t capacity,
                             size_t* count);

typedef struct sd_simulate_options {
    const char* hazard_config;
    const char* feeder;
    uint64_t seed;
    int crews;
    const char* env_config;
    sd_dispatcher_options dispatcher;
    const char* out_dir;
} sd_simulate_options;

/* Writes trace.jsonl and episode.json. */
SD_API sd_status sd_simulate(const sd_simulate_options* options, sd_episode_metrics* out);

/* Aggregates episodes.csv files (or run directories holding one) into out_dir. */
SD_API sd_status sd_report(const char* const* inputs, size_t input_count, const char* out_dir,
                           sd_method_summary* summaries, size_t capacity, size_t* count);

typedef struct sd_train_options {
    const char* config;
    const char* feeder; /* optional */
    const char* out_dir;
    int resume;
    int has_seed;
    uint64_t seed;
    int crews; /* 0 keeps the config value */
    int epochs; /* 0 keeps the config value */
} sd_train_options;

typedef struct sd_train_summary {
    int epochs_run;
    int best_epoch;
    double best_eval_reward;
    double first_eval_reward;
} sd_train_summary;

typedef void (*sd_epoch_callback)(int epoch, double policy_loss, double value_loss, double entropy,
                                  double eval_reward, void* user);

SD_API sd_status sd_train(const sd_train_options* options, sd_epoch_callback callback, void* user,
                          sd_train_summary* out);

#ifdef __cplusplus
}
#endif

#endif
