// Gateway wire protocol: one JSON object per WebSocket text message.
// Ids and payloads travel as lowercase hex strings.

export type Direction = "up" | "down" | "status";

export interface GatewayMessage {
    dir: Direction;
    id: string;
    payload: string;
    ts?: string;
    note?: string;
}

export function bytesToHex(data: Uint8Array): string {
    return Array.from(data, (b) => b.toString(16).padStart(2, "0")).join("");
}

export function hexToBytes(hex: string): Uint8Array {
    const clean = hex.trim().toLowerCase();
    if (clean.length % 2 !== 0 || !/^[0-9a-f]*$/.test(clean)) {
        throw new Error(`not even-length hex: "${hex}"`);
    }
    const out = new Uint8Array(clean.length / 2);
    for (let i = 0; i < out.length; i++) {
        out[i] = parseInt(clean.slice(i * 2, i * 2 + 2), 16);
    }
    return out;
}

export function parseGatewayMessage(text: string): GatewayMessage {
    const obj = JSON.parse(text) as Record<string, unknown>;
    const dir = obj["dir"];
    if (dir !== "up" && dir !== "down" && dir !== "status") {
        throw new Error(`unknown message direction: ${String(dir)}`);
    }
    const id = typeof obj["id"] === "string" ? obj["id"] : "00";
    const payload = typeof obj["payload"] === "string" ? obj["payload"] : "";
    hexToBytes(payload); // validate early so a bad frame never reaches the log
    return {
        dir,
        id,
        payload,
        ts: typeof obj["ts"] === "string" ? obj["ts"] : undefined,
        note: typeof obj["note"] === "string" ? obj["note"] : undefined,
    };
}

export function encodeUplink(subsystemId: number, payloadHex: string): string {
    if (subsystemId < 0 || subsystemId > 0xff || !Number.isInteger(subsystemId)) {
        throw new Error(`subsystem id out of range: ${subsystemId}`);
    }
    hexToBytes(payloadHex);
    return JSON.stringify({
        dir: "up",
        id: subsystemId.toString(16).padStart(2, "0"),
        payload: payloadHex.toLowerCase(),
    });
}
