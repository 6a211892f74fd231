/** Campaign setup form model; validation mirrors the server's config invariants
 * so bad configs are flagged before any request is made. */

export interface CampaignFormModel {
  rounds: number;
  numClients: number;
  minFitClients: number;
  evalMode: "server" | "client";
  validationPath: string;
  validatorFraction: number;
  fineTuneOnly: boolean;
  pointsPerClass: number;
  classDescriptions: string[];
  inputDim: number;
  hiddenDim: number;
  learningRate: number;
  momentum: number;
  batchSize: number;
  localEpochs: number;
  targetAccuracy: number | null;
  roundTimeoutMs: number;
  seed: number;
  minMemoryMb: number;
  minBatteryPct: number;
  requireWifi: boolean;
  /** server-side path to a pretrained weights file; empty = random init */
  pretrainedPath: string;
  /** raw-JSON escape hatch merged over the generated config */
  advancedJson: string;
}

export function defaultForm(): CampaignFormModel {
  return {
    rounds: 20,
    numClients: 10,
    minFitClients: 8,
    evalMode: "server",
    validationPath: "",
    validatorFraction: 0.2,
    fineTuneOnly: false,
    pointsPerClass: 20,
    classDescriptions: [
      "parked car",
      "advertising board",
      "bin or recycling box",
      "street furniture",
      "sidewalk sign",
    ],
    inputDim: 16,
    hiddenDim: 256,
    learningRate: 0.001,
    momentum: 0.9,
    batchSize: 32,
    localEpochs: 1,
    targetAccuracy: null,
    roundTimeoutMs: 30000,
    seed: 1,
    minMemoryMb: 0,
    minBatteryPct: 0,
    requireWifi: false,
    pretrainedPath: "",
    advancedJson: "",
  };
}

export function validateForm(f: CampaignFormModel): string[] {
  const problems: string[] = [];
  if (!Number.isInteger(f.rounds) || f.rounds < 1) problems.push("rounds must be >= 1");
  if (!Number.isInteger(f.numClients) || f.numClients < 1)
    problems.push("num_clients must be >= 1");
  if (!Number.isInteger(f.minFitClients) || f.minFitClients < 1)
    problems.push("min_fit_clients must be >= 1");
  if (f.minFitClients > f.numClients)
    problems.push("min_fit_clients must not exceed num_clients");
  if (f.evalMode === "server" && f.validationPath.trim() === "")
    problems.push("server evaluation requires a validation dataset path");
  if (f.evalMode === "client" && !(f.validatorFraction > 0 && f.validatorFraction <= 1))
    problems.push("validator_fraction must lie in (0, 1]");
  if (f.classDescriptions.length === 0) problems.push("at least one class is required");
  if (f.classDescriptions.some((d) => d.trim() === ""))
    problems.push("class descriptions must be non-empty");
  if (f.classDescriptions.length < 2) problems.push("the model needs at least 2 classes");
  if (!Number.isInteger(f.pointsPerClass) || f.pointsPerClass < 1)
    problems.push("points_per_class must be >= 1");
  if (f.inputDim < 1 || f.hiddenDim < 1) problems.push("model dimensions must be positive");
  if (!(f.learningRate >= 0)) problems.push("learning_rate must not be negative");
  if (!(f.momentum >= 0 && f.momentum < 1)) problems.push("momentum must lie in [0, 1)");
  if (!Number.isInteger(f.batchSize) || f.batchSize < 1) problems.push("batch_size must be >= 1");
  if (!Number.isInteger(f.localEpochs) || f.localEpochs < 1)
    problems.push("local_epochs must be >= 1");
  if (f.targetAccuracy !== null && !(f.targetAccuracy >= 0 && f.targetAccuracy <= 1))
    problems.push("target_accuracy must lie in [0, 1]");
  if (!Number.isInteger(f.roundTimeoutMs) || f.roundTimeoutMs < 1)
    problems.push("round_timeout_ms must be positive");
  if (f.minBatteryPct < 0 || f.minBatteryPct > 100)
    problems.push("min_battery_pct must lie in [0, 100]");
  if (f.advancedJson.trim() !== "") {
    try {
      const parsed = JSON.parse(f.advancedJson);
      if (typeof parsed !== "object" || parsed === null || Array.isArray(parsed))
        problems.push("advanced JSON must be an object");
    } catch {
      problems.push("advanced JSON does not parse");
    }
  }
  return problems;
}

/** Build the CampaignConfig document the API expects. */
export function formToConfig(f: CampaignFormModel): Record<string, unknown> {
  const config: Record<string, unknown> = {
    rounds: f.rounds,
    strategy: "FedAvg",
    eval_mode: f.evalMode,
    validation_path: f.evalMode === "server" ? f.validationPath : null,
    num_clients: f.numClients,
    min_fit_clients: f.minFitClients,
    validator_fraction: f.validatorFraction,
    target_accuracy: f.targetAccuracy,
    round_timeout_ms: f.roundTimeoutMs,
    seed: f.seed,
    selection_criteria: {
      min_memory_mb: f.minMemoryMb,
      min_battery_pct: f.minBatteryPct,
      require_wifi: f.requireWifi,
    },
    task: {
      model: {
        input_dim: f.inputDim,
        hidden_dim: f.hiddenDim,
        num_classes: f.classDescriptions.length,
        fine_tune_only: f.fineTuneOnly,
      },
      initial_params: null,
      fine_tune_only: f.fineTuneOnly,
      points_per_class: f.pointsPerClass,
      classes: f.classDescriptions.map((desc, i) => [i, desc]),
      hyperparameters: {
        learning_rate: f.learningRate,
        momentum: f.momentum,
        batch_size: f.batchSize,
        local_epochs: f.localEpochs,
      },
    },
  };
  if (f.pretrainedPath.trim() !== "") config["pretrained_path"] = f.pretrainedPath.trim();
  if (f.advancedJson.trim() !== "") {
    const overrides = JSON.parse(f.advancedJson) as Record<string, unknown>;
    Object.assign(config, overrides);
  }
  return config;
}
