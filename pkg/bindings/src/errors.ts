/** Error taxonomy mirroring the host toolkit's exit codes and classes. */

export class ValidationError extends Error {
  constructor(message: string) {
    super(message);
    this.name = "ValidationError";
  }
}

export class FormatError extends Error {
  constructor(message: string) {
    super(message);
    this.name = "FormatError";
  }
}

export class UnsupportedError extends FormatError {
  constructor(message: string) {
    super(message);
    this.name = "UnsupportedError";
  }
}

/** Map the CLI's machine-parsable stderr object back to a typed error. */
export function errorFromCli(exitCode: number, stderr: string): Error {
  let kind = exitCode === 2 ? "ValidationError" : "IOError";
  let message = stderr.trim();
  try {
    const parsed = JSON.parse(stderr.trim().split("\n").pop() ?? "");
    kind = parsed.error ?? kind;
    message = parsed.message ?? message;
  } catch {
    // stderr was not the expected JSON object; keep the raw text
  }
  if (kind === "ValidationError") return new ValidationError(message);
  if (kind === "UnsupportedError") return new UnsupportedError(message);
  if (kind === "FormatError") return new FormatError(message);
  return new Error(`${kind}: ${message}`);
}
