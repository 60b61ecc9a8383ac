// The console's connection to the gateway: reconnects with backoff, keeps
// the downlink log across drops, and never touches mission state except
// through sendCommand.

import { Action, composePayload } from "./commands.js";
import { summarizeDownlink } from "./decode.js";
import { encodeUplink, hexToBytes, parseGatewayMessage } from "./protocol.js";

export type ConnectionState = "connecting" | "connected" | "retrying" | "closed";

export interface LogRow {
    ts: string;
    dir: string;
    id: string;
    summary: string;
    payloadHex: string; // raw hex is always kept, decoded or not
}

// Structural subset of the browser WebSocket; the `ws` package satisfies
// it too, which is what the tests inject.
export interface SocketLike {
    onopen: (() => void) | null;
    onmessage: ((ev: { data: unknown }) => void) | null;
    onclose: (() => void) | null;
    onerror: (() => void) | null;
    send(data: string): void;
    close(): void;
}

export type SocketFactory = (url: string) => SocketLike;

export interface SessionOptions {
    backoffMs?: number;
    maxBackoffMs?: number;
    maxLogRows?: number;
    onChange?: () => void;
}

export class ConsoleSession {
    state: ConnectionState = "closed";
    readonly log: LogRow[] = [];
    // device id -> last decoded wheel speed
    readonly wheelSpeeds = new Map<number, number>();
    lastWheel: { id: number; rpm: number } | null = null;

    private socket: SocketLike | null = null;
    private retryTimer: ReturnType<typeof setTimeout> | null = null;
    private backoff: number;
    private readonly url: string;
    private readonly factory: SocketFactory;
    private readonly options: Required<Omit<SessionOptions, "onChange">>;
    private readonly onChange: () => void;
    private closed = false;

    constructor(url: string, factory: SocketFactory, options: SessionOptions = {}) {
        this.url = url;
        this.factory = factory;
        this.options = {
            backoffMs: options.backoffMs ?? 500,
            maxBackoffMs: options.maxBackoffMs ?? 5000,
            maxLogRows: options.maxLogRows ?? 2000,
        };
        this.backoff = this.options.backoffMs;
        this.onChange = options.onChange ?? (() => undefined);
    }

    connect(): void {
        this.closed = false;
        this.open("connecting");
    }

    close(): void {
        this.closed = true;
        if (this.retryTimer !== null) {
            clearTimeout(this.retryTimer);
            this.retryTimer = null;
        }
        this.socket?.close();
        this.socket = null;
        this.setState("closed");
    }

    sendCommand(target: number, action: Action): void {
        if (this.state !== "connected" || this.socket === null) {
            throw new Error("not connected");
        }
        const payloadHex = composePayload(action); // throws before anything is sent
        this.socket.send(encodeUplink(target, payloadHex));
        this.appendRow({
            ts: new Date().toISOString(),
            dir: "up",
            id: target.toString(16).padStart(2, "0"),
            summary: describeAction(action),
            payloadHex,
        });
    }

    private open(entryState: ConnectionState): void {
        this.setState(entryState);
        let socket: SocketLike;
        try {
            socket = this.factory(this.url);
        } catch {
            this.scheduleRetry();
            return;
        }
        this.socket = socket;
        socket.onopen = () => {
            this.backoff = this.options.backoffMs;
            this.setState("connected");
        };
        socket.onmessage = (ev) => this.handleText(String(ev.data));
        socket.onerror = () => undefined; // onclose always follows
        socket.onclose = () => {
            this.socket = null;
            if (!this.closed) {
                this.scheduleRetry();
            }
        };
    }

    private scheduleRetry(): void {
        this.setState("retrying");
        const delay = this.backoff;
        this.backoff = Math.min(this.backoff * 2, this.options.maxBackoffMs);
        this.retryTimer = setTimeout(() => {
            this.retryTimer = null;
            if (!this.closed) {
                this.open("retrying");
            }
        }, delay);
    }

    private handleText(text: string): void {
        let row: LogRow;
        try {
            const msg = parseGatewayMessage(text);
            if (msg.dir === "down") {
                const payload = hexToBytes(msg.payload);
                const view = summarizeDownlink(parseInt(msg.id, 16), payload);
                if (view.wheelSpeed !== undefined) {
                    const id = parseInt(msg.id, 16);
                    this.wheelSpeeds.set(id, view.wheelSpeed);
                    this.lastWheel = { id, rpm: view.wheelSpeed };
                }
                row = {
                    ts: msg.ts ?? new Date().toISOString(),
                    dir: "down",
                    id: msg.id,
                    summary: view.summary,
                    payloadHex: msg.payload,
                };
            } else {
                row = {
                    ts: msg.ts ?? new Date().toISOString(),
                    dir: msg.dir,
                    id: msg.id,
                    summary: msg.note ?? msg.dir,
                    payloadHex: msg.payload,
                };
            }
        } catch {
            // undecodable message: keep the raw text visible rather than drop it
            row = {
                ts: new Date().toISOString(),
                dir: "status",
                id: "00",
                summary: "unparseable message",
                payloadHex: "",
            };
        }
        this.appendRow(row);
    }

    private appendRow(row: LogRow): void {
        this.log.push(row);
        if (this.log.length > this.options.maxLogRows) {
            this.log.splice(0, this.log.length - this.options.maxLogRows);
        }
        this.onChange();
    }

    private setState(state: ConnectionState): void {
        this.state = state;
        this.onChange();
    }
}

export function describeAction(action: Action): string {
    switch (action.kind) {
        case "raw":
            return "raw command";
        case "setWheelSpeed":
            return `set wheel ${action.rpm} rpm`;
        case "requestTelemetry":
            return "request telemetry";
        case "requestStsType":
            return `request STS type ${action.type.toString(16).padStart(2, "0")}`;
    }
}
